//! Identifiable quantities of a fitted model: marginal temporal effects
//! from the full age × period × cohort cube of linear predictors, their
//! detrended curvatures, replicate bias/MSE and the M-periodicity statistic.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::basis::{natural_cubic_fit, KnotKind, KnotSet};
use crate::design::{ApcDesign, Dimension};
use crate::error::{ApcError, Result};
use crate::pirls::FittedApcModel;
use nalgebra::DVector;

/// Linear predictor over every (age, period, cohort) combination, including
/// combinations that cannot occur in data.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaCube {
    pub n_age: usize,
    pub n_period: usize,
    pub n_cohort: usize,
    values: Vec<f64>,
}

impl EtaCube {
    /// Cube of `age[a] + period[p] + cohort[c] + constant`.
    pub fn additive(constant: f64, age: &[f64], period: &[f64], cohort: &[f64]) -> Self {
        let mut values = Vec::with_capacity(age.len() * period.len() * cohort.len());
        for &fa in age {
            for &fp in period {
                for &fc in cohort {
                    values.push(constant + fa + fp + fc);
                }
            }
        }
        Self { n_age: age.len(), n_period: period.len(), n_cohort: cohort.len(), values }
    }

    /// 0-based lookup.
    pub fn get(&self, a: usize, p: usize, c: usize) -> f64 {
        self.values[(a * self.n_period + p) * self.n_cohort + c]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn grand_mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    fn len_of(&self, d: Dimension) -> usize {
        match d {
            Dimension::Age => self.n_age,
            Dimension::Period => self.n_period,
            Dimension::Cohort => self.n_cohort,
        }
    }
}

/// Per-level contributions of a design's intercept, slopes and curvature
/// blocks: (constant, age, period, cohort).
fn term_contributions(design: &ApcDesign, beta: &DVector<f64>) -> (f64, [Vec<f64>; 3]) {
    let mut parts: [Vec<f64>; 3] = Default::default();
    for d in Dimension::ALL {
        let term = design.term(d);
        let mut f = term.evaluate(beta);
        if let Some(slope) = design.slopes.iter().find(|s| s.dimension == d) {
            for (v, x) in f.iter_mut().zip(&term.level_values) {
                *v += beta[slope.column] * slope.value(*x);
            }
        }
        parts[d.index()] = f;
    }
    (beta[0], parts)
}

/// Full cube of linear predictors (offsets excluded) at the design's
/// level midpoints.
pub fn full_cube_eta(model: &FittedApcModel) -> EtaCube {
    cube_for(&model.design, &model.beta)
}

pub fn cube_for(design: &ApcDesign, beta: &DVector<f64>) -> EtaCube {
    let (constant, [age, period, cohort]) = term_contributions(design, beta);
    EtaCube::additive(constant, &age, &period, &cohort)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectTable {
    pub dimension: Dimension,
    pub x: Vec<f64>,
    pub effect: Vec<f64>,
    pub curvature: Vec<f64>,
}

/// Mean of the cube over the other two dimensions minus the grand mean.
/// The curvature column is left empty.
pub fn marginal_effect(cube: &EtaCube, dimension: Dimension, x: &[f64]) -> Result<EffectTable> {
    let n = cube.len_of(dimension);
    if x.len() != n {
        return Err(ApcError::Dimension(format!("{} covariate values for {n} {dimension} levels", x.len())));
    }
    let mut sums = vec![0.0; n];
    for a in 0..cube.n_age {
        for p in 0..cube.n_period {
            for c in 0..cube.n_cohort {
                let idx = match dimension {
                    Dimension::Age => a,
                    Dimension::Period => p,
                    Dimension::Cohort => c,
                };
                sums[idx] += cube.get(a, p, c);
            }
        }
    }
    let per_level = (cube.values.len() / n) as f64;
    let grand = cube.grand_mean();
    let effect = sums.iter().map(|s| s / per_level - grand).collect();
    Ok(EffectTable { dimension, x: x.to_vec(), effect, curvature: Vec::new() })
}

/// Residuals of the least-squares line of `y` on `x`.
pub fn detrend_values(x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return Err(ApcError::Dimension(format!("{} x values for {} y values", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(ApcError::Config("detrending needs at least 3 points".into()));
    }
    let n = x.len() as f64;
    let xm = x.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - xm).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(ApcError::Config("detrending needs distinct x values".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - xm) * (b - ym)).sum();
    let slope = sxy / sxx;
    Ok(x.iter().zip(y).map(|(a, b)| b - ym - slope * (a - xm)).collect())
}

pub fn detrend(table: &EffectTable) -> Result<EffectTable> {
    let curvature = detrend_values(&table.x, &table.effect)?;
    Ok(EffectTable { curvature, ..table.clone() })
}

/// Detrended marginal effects for all three dimensions of a fitted model.
pub fn model_effects(model: &FittedApcModel) -> Result<Vec<EffectTable>> {
    design_effects(&model.design, &model.beta)
}

pub fn design_effects(design: &ApcDesign, beta: &DVector<f64>) -> Result<Vec<EffectTable>> {
    // means over an additive cube separate, so the cube itself is not materialized
    let (_, parts) = term_contributions(design, beta);
    Dimension::ALL
        .into_iter()
        .map(|d| {
            let f = &parts[d.index()];
            let mean = f.iter().sum::<f64>() / f.len() as f64;
            let effect: Vec<f64> = f.iter().map(|v| v - mean).collect();
            let x = design.term(d).level_values.clone();
            detrend(&EffectTable { dimension: d, x, effect, curvature: Vec::new() })
        })
        .collect()
}

/// A fitted curvature function at its dimension's level midpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureCurve {
    pub dimension: Dimension,
    pub x: Vec<f64>,
    pub value: Vec<f64>,
}

/// The smooth curvature terms themselves, before any marginalization.
pub fn curvature_curves(model: &FittedApcModel) -> Vec<CurvatureCurve> {
    design_curves(&model.design, &model.beta)
}

pub fn design_curves(design: &ApcDesign, beta: &DVector<f64>) -> Vec<CurvatureCurve> {
    Dimension::ALL
        .into_iter()
        .map(|d| {
            let term = design.term(d);
            CurvatureCurve { dimension: d, x: term.level_values.clone(), value: term.evaluate(beta) }
        })
        .collect()
}

/// Values of a curve at `points`, each of which must be one of its `x`.
pub fn curve_at(x: &[f64], values: &[f64], points: &[f64]) -> Result<Vec<f64>> {
    points
        .iter()
        .map(|p| {
            x.iter()
                .position(|v| (v - p).abs() <= 1e-9 * p.abs().max(1.0))
                .map(|i| values[i])
                .ok_or_else(|| ApcError::Domain(format!("{p} is not a level of the curve")))
        })
        .collect()
}

pub fn mean_squared_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(ApcError::Dimension(format!("curves of length {} and {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>() / a.len() as f64)
}

/// Block means of `ratio` consecutive single-year age values.
pub fn aggregate_true_age(effect: &[f64], ratio: usize) -> Result<Vec<f64>> {
    if ratio == 0 || !effect.len().is_multiple_of(ratio) {
        return Err(ApcError::Config(format!("{} ages cannot be grouped in blocks of {ratio}", effect.len())));
    }
    Ok(effect.chunks(ratio).map(|c| c.iter().sum::<f64>() / ratio as f64).collect())
}

/// Moving average of window `ratio` with stride 1.
pub fn aggregate_true_cohort(effect: &[f64], ratio: usize) -> Result<Vec<f64>> {
    if ratio == 0 || effect.len() < ratio {
        return Err(ApcError::Config(format!("{} cohorts cannot be averaged in windows of {ratio}", effect.len())));
    }
    Ok(effect.windows(ratio).map(|w| w.iter().sum::<f64>() / ratio as f64).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub bias: Vec<f64>,
    pub mse: Vec<f64>,
    pub replicates: usize,
}

/// Pointwise bias and mean squared error of replicate estimates.
pub fn bias_mse(estimates: &[Vec<f64>], truth: &[f64]) -> Result<ReplicateSummary> {
    if estimates.is_empty() {
        return Err(ApcError::Config("bias and MSE need at least one replicate".into()));
    }
    let n = truth.len();
    let mut bias = vec![0.0; n];
    let mut mse = vec![0.0; n];
    for (s, est) in estimates.iter().enumerate() {
        if est.len() != n {
            return Err(ApcError::Dimension(format!("replicate {s} has {} points, truth has {n}", est.len())));
        }
        for j in 0..n {
            let e = est[j] - truth[j];
            bias[j] += e;
            mse[j] += e * e;
        }
    }
    let s = estimates.len() as f64;
    bias.iter_mut().for_each(|b| *b /= s);
    mse.iter_mut().for_each(|m| *m /= s);
    Ok(ReplicateSummary { bias, mse, replicates: estimates.len() })
}

/// Peak amplitude of the period-`ratio` component of a sequence.
///
/// Uses the first `ratio·⌊n/ratio⌋` points with their mean removed, so a
/// sampled sinusoid of amplitude 1 and period `ratio` returns 1.
pub fn periodicity_amplitude(values: &[f64], ratio: usize) -> Result<f64> {
    if ratio < 2 {
        return Err(ApcError::Config("periodicity needs a period of at least 2".into()));
    }
    if values.len() < 2 * ratio {
        return Err(ApcError::Config(format!(
            "periodicity at period {ratio} needs at least {} points, got {}",
            2 * ratio,
            values.len()
        )));
    }
    let len = ratio * (values.len() / ratio);
    let used = &values[..len];
    let mean = used.iter().sum::<f64>() / len as f64;
    let (mut re, mut im) = (0.0, 0.0);
    for (t, v) in used.iter().enumerate() {
        let angle = -2.0 * std::f64::consts::PI * (t % ratio) as f64 / ratio as f64;
        re += (v - mean) * angle.cos();
        im += (v - mean) * angle.sin();
    }
    let magnitude = re.hypot(im);
    // the Nyquist component is real and not split between ±frequency
    let scale = if ratio == 2 { 1.0 } else { 2.0 };
    Ok(scale * magnitude / len as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyInequality {
    /// ∫ (f'' + v'')²
    pub lhs: f64,
    /// 2 ∫ f'' v''
    pub cross: f64,
    /// ∫ f''²
    pub rhs: f64,
}

/// Integrates the roughness of a natural cubic spline `f` (knots `ratio`
/// apart, values at knots) with and without a `ratio`-periodic addition `v`,
/// given through its second derivative.
pub fn penalty_inequality_check(
    knots: &KnotSet,
    values: &[f64],
    ratio: f64,
    periodic_second_derivative: impl Fn(f64) -> f64,
) -> Result<PenaltyInequality> {
    if knots.kind != KnotKind::Standard {
        return Err(ApcError::Config("penalty inequality needs standard knots".into()));
    }
    if knots.knots.windows(2).any(|w| ((w[1] - w[0]) - ratio).abs() > 1e-9 * ratio.abs().max(1.0)) {
        return Err(ApcError::Config(format!("knots are not spaced {ratio} apart")));
    }
    let spline = natural_cubic_fit(knots, values)?;
    let (nodes, weights) = gauss_legendre(16);
    let (mut lhs, mut cross, mut rhs) = (0.0, 0.0, 0.0);
    for w in knots.knots.windows(2) {
        // four panels per knot interval keep the periodic factor well resolved
        let panels = 4;
        let h = (w[1] - w[0]) / panels as f64;
        for k in 0..panels {
            let lo = w[0] + k as f64 * h;
            for (t, wt) in nodes.iter().zip(&weights) {
                let x = lo + 0.5 * h * (t + 1.0);
                let f2 = spline.second_derivative(x);
                let v2 = periodic_second_derivative(x);
                let scale = 0.5 * h * wt;
                lhs += scale * (f2 + v2) * (f2 + v2);
                cross += scale * 2.0 * f2 * v2;
                rhs += scale * f2 * f2;
            }
        }
    }
    Ok(PenaltyInequality { lhs, cross, rhs })
}

/// Gauss–Legendre nodes and weights on [−1, 1].
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

#[derive(Serialize)]
struct EffectRow<'a> {
    dimension: &'a str,
    x: f64,
    effect: f64,
    curvature: f64,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    dimension: &'a str,
    x: f64,
    bias: f64,
    mse: f64,
}

/// Writes effect tables as `dimension,x,effect,curvature`.
pub fn write_effects_csv<W: Write>(out: W, tables: &[EffectTable]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for t in tables {
        for i in 0..t.x.len() {
            let curvature = t.curvature.get(i).copied().unwrap_or(f64::NAN);
            w.serialize(EffectRow { dimension: t.dimension.name(), x: t.x[i], effect: t.effect[i], curvature })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes replicate summaries as `dimension,x,bias,mse`.
pub fn write_summary_csv<W: Write>(out: W, rows: &[(Dimension, &[f64], &ReplicateSummary)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (d, x, s) in rows {
        for i in 0..x.len() {
            w.serialize(SummaryRow { dimension: d.name(), x: x[i], bias: s.bias[i], mse: s.mse[i] })?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct CurveRow {
    dimension: &'static str,
    x: f64,
    value: f64,
}

/// Writes curvature functions as `dimension,x,value`.
pub fn write_curves_csv<W: Write>(out: W, curves: &[CurvatureCurve]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for c in curves {
        for (x, value) in c.x.iter().zip(&c.value) {
            w.serialize(CurveRow { dimension: c.dimension.name(), x: *x, value: *value })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_effects_csv(path: &Path, tables: &[EffectTable]) -> Result<()> {
    write_effects_csv(std::fs::File::create(path)?, tables)
}
