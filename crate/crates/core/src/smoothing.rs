//! Smoothing-parameter selection by generalized cross-validation.
//!
//! `GCV(λ) = n·D(λ) / (n − edf(λ))²`, minimized over `log10 λ` in a box.
//! A coarse coordinate search on an integer grid locates the basin and
//! Nelder–Mead refines it. Every evaluation restarts PIRLS from the same
//! initial values so the score is a pure function of `λ`.

use std::collections::HashMap;
use std::sync::Arc;

use crate::dataset::ApcDataset;
use crate::design::{build_design_for_cells, ApcDesign, DesignSpec};
use crate::error::{ApcError, Result};
use crate::family::Family;
use crate::pirls::{model_from, FitControl, FittedApcModel, PenalizedProblem, PirlsResult};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GcvControl {
    pub log10_lower: f64,
    pub log10_upper: f64,
    /// Starting `log10 λ` for every block.
    pub log10_start: f64,
    pub grid_step: f64,
    pub sweeps: usize,
    pub max_evals: usize,
    /// Stop refining once the simplex spans less than this in `log10 λ`.
    pub simplex_tol: f64,
    pub fit: FitControl,
}

impl Default for GcvControl {
    fn default() -> Self {
        Self {
            log10_lower: -6.0,
            log10_upper: 8.0,
            log10_start: 1.0,
            grid_step: 1.0,
            sweeps: 2,
            max_evals: 120,
            simplex_tol: 1e-3,
            fit: FitControl::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SmoothingSelection {
    pub lambdas: Vec<f64>,
    pub gcv: f64,
    pub evaluations: usize,
    /// The score did not change across the grid; the upper edge was returned.
    pub flat: bool,
}

pub fn gcv_score(n: usize, deviance: f64, edf: f64) -> f64 {
    let n = n as f64;
    let denom = n - edf;
    if denom <= 0.0 {
        f64::INFINITY
    } else {
        n * deviance / (denom * denom)
    }
}

struct Objective<'a> {
    problem: &'a PenalizedProblem,
    y: &'a [f64],
    family: &'a Family,
    control: &'a GcvControl,
    evaluations: usize,
}

impl Objective<'_> {
    fn eval(&mut self, log_lambda: &[f64]) -> f64 {
        self.evaluations += 1;
        let lambdas: Vec<f64> = log_lambda.iter().map(|l| 10f64.powf(*l)).collect();
        match self.problem.fit(self.y, self.family, &lambdas, &self.control.fit) {
            Ok(r) => gcv_score(self.problem.nrows(), r.deviance, r.edf),
            Err(_) => f64::INFINITY,
        }
    }

    fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.control.log10_lower, self.control.log10_upper)
    }
}

/// Chooses one smoothing parameter per penalty block.
pub fn select_lambdas(
    problem: &PenalizedProblem,
    y: &[f64],
    family: &Family,
    control: &GcvControl,
) -> Result<SmoothingSelection> {
    let k = problem.n_blocks();
    if k == 0 {
        return Err(ApcError::Config("no penalties to select smoothing parameters for".into()));
    }
    if control.log10_lower.is_nan() || control.log10_upper.is_nan() || control.log10_lower >= control.log10_upper || control.grid_step <= 0.0 {
        return Err(ApcError::Config("invalid smoothing-parameter search range".into()));
    }
    family.validate(y)?;
    let mut obj = Objective { problem, y, family, control, evaluations: 0 };
    let steps = ((control.log10_upper - control.log10_lower) / control.grid_step).round() as i64;
    let grid: Vec<f64> = (0..=steps).map(|i| control.log10_lower + i as f64 * control.grid_step).collect();

    // coarse coordinate search; keys are grid indices so repeats are cached
    let start_idx = grid
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - control.log10_start).abs().total_cmp(&(b.1 - control.log10_start).abs()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mut cache: HashMap<Vec<usize>, f64> = HashMap::new();
    let mut current = vec![start_idx; k];
    let mut score_at = |idx: &Vec<usize>, obj: &mut Objective| -> f64 {
        if let Some(v) = cache.get(idx) {
            return *v;
        }
        let point: Vec<f64> = idx.iter().map(|&i| grid[i]).collect();
        let v = obj.eval(&point);
        cache.insert(idx.clone(), v);
        v
    };
    let mut best = score_at(&current, &mut obj);
    let mut lo = best;
    let mut hi = best;
    for _ in 0..control.sweeps {
        for b in 0..k {
            let mut best_i = current[b];
            for i in 0..grid.len() {
                let mut cand = current.clone();
                cand[b] = i;
                let v = score_at(&cand, &mut obj);
                if v.is_finite() {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                // ties go to the smaller smoothing parameter
                if v < best || (v == best && i < best_i) {
                    best = v;
                    best_i = i;
                }
            }
            current[b] = best_i;
        }
    }
    if !best.is_finite() {
        return Err(ApcError::Numerical("GCV score is not finite anywhere on the search grid".into()));
    }
    if (hi - lo) <= 1e-12 * lo.abs().max(1e-300) {
        log::warn!("GCV score is flat over the search range; using the upper bound for every smoothing parameter");
        return Ok(SmoothingSelection {
            lambdas: vec![10f64.powf(control.log10_upper); k],
            gcv: best,
            evaluations: obj.evaluations,
            flat: true,
        });
    }

    let x0: Vec<f64> = current.iter().map(|&i| grid[i]).collect();
    let (x, f) = nelder_mead(&mut obj, x0, best, control);
    Ok(SmoothingSelection {
        lambdas: x.iter().map(|l| 10f64.powf(*l)).collect(),
        gcv: f,
        evaluations: obj.evaluations,
        flat: false,
    })
}

/// Box-clamped Nelder–Mead in `log10 λ`, started from a grid point.
fn nelder_mead(obj: &mut Objective, x0: Vec<f64>, f0: f64, control: &GcvControl) -> (Vec<f64>, f64) {
    let k = x0.len();
    let step = 0.5 * control.grid_step;
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(x0.clone(), f0)];
    for j in 0..k {
        let mut v = x0.clone();
        // step inward when the start sits on the upper edge
        v[j] = if v[j] + step > control.log10_upper { v[j] - step } else { v[j] + step };
        let f = obj.eval(&v);
        simplex.push((v, f));
    }
    let order = |s: &mut Vec<(Vec<f64>, f64)>| {
        // stable sort keeps earlier (deterministic) vertices first on ties
        s.sort_by(|a, b| a.1.total_cmp(&b.1));
    };
    order(&mut simplex);
    while obj.evaluations < control.max_evals {
        let spread = (1..=k)
            .map(|i| simplex[i].0.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        let f_range = simplex[k].1 - simplex[0].1;
        if spread < control.simplex_tol || f_range <= 1e-10 * simplex[0].1.abs() {
            break;
        }
        let centroid: Vec<f64> = (0..k).map(|d| simplex[..k].iter().map(|v| v.0[d]).sum::<f64>() / k as f64).collect();
        let worst = simplex[k].clone();
        let along = |t: f64, obj: &Objective| -> Vec<f64> {
            centroid.iter().zip(&worst.0).map(|(c, w)| obj.clamp(c + t * (c - w))).collect()
        };
        let xr = along(1.0, obj);
        let fr = obj.eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(2.0, obj);
            let fe = obj.eval(&xe);
            simplex[k] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[k - 1].1 {
            simplex[k] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst.1 {
                let xc = along(0.5, obj);
                let fc = obj.eval(&xc);
                (xc, fc)
            } else {
                let xc = along(-0.5, obj);
                let fc = obj.eval(&xc);
                (xc, fc)
            };
            if fc < worst.1.min(fr) {
                simplex[k] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = v.0.iter().zip(&best).map(|(a, b)| b + 0.5 * (a - b)).collect();
                    let f = obj.eval(&x);
                    *v = (x, f);
                }
            }
        }
        order(&mut simplex);
    }
    simplex.swap_remove(0)
}

/// Fits a design end to end: penalized kinds get GCV-selected smoothing
/// parameters, the others a plain (possibly rank-deficient) GLM fit.
pub fn fit_apc(design: &Arc<ApcDesign>, y: &[f64], family: &Family, control: &GcvControl) -> Result<FittedApcModel> {
    let problem = PenalizedProblem::from_design(design, control.fit.rank_tol)?;
    fit_prepared(&problem, design, y, family, control)
}

/// As [`fit_apc`] with the aliasing analysis of `design` already done;
/// lets repeated fits of one design share it.
pub fn fit_prepared(
    problem: &PenalizedProblem,
    design: &Arc<ApcDesign>,
    y: &[f64],
    family: &Family,
    control: &GcvControl,
) -> Result<FittedApcModel> {
    if problem.n_blocks() == 0 {
        let res = problem.fit(y, family, &[], &control.fit)?;
        return Ok(model_from(res, design, family, Vec::new(), None));
    }
    let sel = select_lambdas(problem, y, family, control)?;
    let res: PirlsResult = problem.fit(y, family, &sel.lambdas, &control.fit)?;
    let gcv = gcv_score(problem.nrows(), res.deviance, res.edf);
    Ok(model_from(res, design, family, sel.lambdas, Some(gcv)))
}

/// Builds the design for the dataset's observed cells and fits it.
pub fn fit_dataset(data: &ApcDataset, spec: DesignSpec, control: &GcvControl) -> Result<FittedApcModel> {
    let design = Arc::new(build_design_for_cells(&data.grid, &data.cells, spec)?);
    fit_apc(&design, &data.response, &data.family(), control)
}

/// Fits at user-supplied smoothing parameters (`None` selects them).
pub fn fit_apc_with_lambdas(
    design: &Arc<ApcDesign>,
    y: &[f64],
    family: &Family,
    lambdas: Option<&[f64]>,
    control: &GcvControl,
) -> Result<FittedApcModel> {
    match lambdas {
        None => fit_apc(design, y, family, control),
        Some(l) => {
            let problem = PenalizedProblem::from_design(design, control.fit.rank_tol)?;
            let res = problem.fit(y, family, l, &control.fit)?;
            let gcv = gcv_score(problem.nrows(), res.deviance, res.edf);
            Ok(model_from(res, design, family, l.to_vec(), Some(gcv)))
        }
    }
}
