//! Cubic regression spline bases in the value-at-knots parameterization.
//!
//! A coefficient vector holds the function values at the knots. The second
//! derivatives at the knots follow from the tridiagonal continuity system
//! `B δ = D β`, which gives both the evaluation rows and the exact
//! roughness penalty `S = Dᵀ B⁻¹ D` (so `βᵀ S β = ∫ f''²`).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ApcError, Result};
use crate::reparam::NullSpaceTransform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnotKind {
    Standard,
    Cyclic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotSet {
    pub knots: Vec<f64>,
    pub kind: KnotKind,
}

impl KnotSet {
    pub fn new(knots: Vec<f64>, kind: KnotKind) -> Result<Self> {
        if knots.len() < 3 {
            return Err(ApcError::Config(format!("need at least 3 knots, got {}", knots.len())));
        }
        if knots.iter().any(|k| !k.is_finite()) || knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ApcError::Config("knots must be finite and strictly increasing".into()));
        }
        Ok(Self { knots, kind })
    }

    /// Evenly spaced cyclic knots: `segments + 1` knots from `start` to
    /// `start + period`, the last one being the wrap point.
    pub fn cyclic_uniform(start: f64, period: f64, segments: usize) -> Result<Self> {
        if period.is_nan() || period <= 0.0 || segments == 0 {
            return Err(ApcError::Config("cyclic knots need a positive period".into()));
        }
        let knots = (0..=segments).map(|i| start + period * i as f64 / segments as f64).collect();
        Self::new(knots, KnotKind::Cyclic)
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.knots[0]
    }

    pub fn last(&self) -> f64 {
        self.knots[self.knots.len() - 1]
    }
}

/// Sorted unique values (exact comparison after sorting).
pub fn unique_sorted(values: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * a.abs().max(1.0));
    v
}

/// Default basis size: a quarter of the distinct covariate values, at least 3.
pub fn default_knot_count(n_unique: usize) -> usize {
    ((0.25 * n_unique as f64).round() as usize).max(3)
}

/// Knots at evenly spaced quantiles of the unique covariate values,
/// interpolating linearly between neighbouring values.
pub fn default_knots(values: &[f64], count: usize) -> Result<KnotSet> {
    if count < 3 {
        return Err(ApcError::Config(format!("knot count must be at least 3, got {count}")));
    }
    let uniq = unique_sorted(values);
    if uniq.is_empty() {
        return Err(ApcError::Config("no covariate values to place knots on".into()));
    }
    let n = uniq.len();
    if n < count {
        return Err(ApcError::Config(format!(
            "{count} knots requested but only {n} unique covariate values"
        )));
    }
    if n == count {
        return KnotSet::new(uniq, KnotKind::Standard);
    }
    let delta = (n - 1) as f64 / (count - 1) as f64;
    let mut knots = Vec::with_capacity(count);
    knots.push(uniq[0]);
    for i in 1..(count - 1) {
        let pos = delta * i as f64;
        let lo = pos.floor() as usize;
        let frac = pos - lo as f64;
        let hi = (lo + 1).min(n - 1);
        knots.push(uniq[lo] * (1.0 - frac) + uniq[hi] * frac);
    }
    knots.push(uniq[n - 1]);
    KnotSet::new(knots, KnotKind::Standard)
}

/// Evaluated basis with its penalty and any constraint transform applied so far.
#[derive(Debug, Clone)]
pub struct BasisBlock {
    pub design: DMatrix<f64>,
    pub penalty: DMatrix<f64>,
    pub knots: Option<KnotSet>,
    pub transform: Option<NullSpaceTransform>,
}

impl BasisBlock {
    pub fn ncols(&self) -> usize {
        self.design.ncols()
    }
}

fn spacings(knots: &[f64]) -> Vec<f64> {
    knots.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Interval `j` with `knots[j] <= x <= knots[j+1]`, clamped to the knot range.
fn locate(knots: &[f64], x: f64) -> usize {
    let n = knots.len();
    match knots.partition_point(|&k| k <= x) {
        0 => 0,
        i if i >= n => n - 2,
        i => i - 1,
    }
}

/// Local cubic weights on interval `[lo, lo + h]`: (a⁻, a⁺, c⁻, c⁺).
fn local_weights(lo: f64, h: f64, x: f64) -> (f64, f64, f64, f64) {
    let right = lo + h - x;
    let left = x - lo;
    (
        right / h,
        left / h,
        (right * right * right / h - h * right) / 6.0,
        (left * left * left / h - h * left) / 6.0,
    )
}

/// Standard cubic regression spline: natural boundary conditions, linear
/// extrapolation outside the knot range.
#[derive(Debug, Clone)]
pub struct CrsBasis {
    knots: KnotSet,
    /// K×K map from knot values to knot second derivatives.
    second: DMatrix<f64>,
    penalty: DMatrix<f64>,
}

impl CrsBasis {
    pub fn new(knots: &KnotSet) -> Result<Self> {
        if knots.kind != KnotKind::Standard {
            return Err(ApcError::Config("cubic regression spline needs standard knots".into()));
        }
        let k = knots.len();
        if k < 3 {
            return Err(ApcError::Config(format!("need at least 3 knots, got {k}")));
        }
        let h = spacings(&knots.knots);
        let m = k - 2;
        let mut d = DMatrix::zeros(m, k);
        let mut b = DMatrix::zeros(m, m);
        for i in 0..m {
            d[(i, i)] = 1.0 / h[i];
            d[(i, i + 1)] = -1.0 / h[i] - 1.0 / h[i + 1];
            d[(i, i + 2)] = 1.0 / h[i + 1];
            b[(i, i)] = (h[i] + h[i + 1]) / 3.0;
            if i + 1 < m {
                b[(i, i + 1)] = h[i + 1] / 6.0;
                b[(i + 1, i)] = h[i + 1] / 6.0;
            }
        }
        let chol = b
            .cholesky()
            .ok_or_else(|| ApcError::Numerical("knot spacing matrix is not positive definite".into()))?;
        let binv_d = chol.solve(&d);
        let mut second = DMatrix::zeros(k, k);
        second.view_mut((1, 0), (m, k)).copy_from(&binv_d);
        let mut penalty = d.transpose() * &binv_d;
        symmetrize(&mut penalty);
        Ok(Self { knots: knots.clone(), second, penalty })
    }

    pub fn knots(&self) -> &KnotSet {
        &self.knots
    }

    pub fn dim(&self) -> usize {
        self.knots.len()
    }

    pub fn penalty(&self) -> &DMatrix<f64> {
        &self.penalty
    }

    /// Row of the basis evaluated at `x`.
    pub fn row(&self, x: f64) -> DVector<f64> {
        let kn = &self.knots.knots;
        let k = kn.len();
        let mut row = DVector::zeros(k);
        if x < kn[0] {
            // f(x0) + (x − x0) f'(x0), with f'(x0) = (β1−β0)/h − h/3 δ0 − h/6 δ1
            let h = kn[1] - kn[0];
            let t = x - kn[0];
            row[0] += 1.0 - t / h;
            row[1] += t / h;
            for c in 0..k {
                row[c] += t * (-h / 3.0 * self.second[(0, c)] - h / 6.0 * self.second[(1, c)]);
            }
        } else if x > kn[k - 1] {
            let h = kn[k - 1] - kn[k - 2];
            let t = x - kn[k - 1];
            row[k - 1] += 1.0 + t / h;
            row[k - 2] -= t / h;
            for c in 0..k {
                row[c] += t * (h / 6.0 * self.second[(k - 2, c)] + h / 3.0 * self.second[(k - 1, c)]);
            }
        } else {
            let j = locate(kn, x);
            let (am, ap, cm, cp) = local_weights(kn[j], kn[j + 1] - kn[j], x);
            row[j] += am;
            row[j + 1] += ap;
            for c in 0..k {
                row[c] += cm * self.second[(j, c)] + cp * self.second[(j + 1, c)];
            }
        }
        row
    }

    pub fn design(&self, x: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(x.len(), self.dim());
        for (i, &xi) in x.iter().enumerate() {
            out.set_row(i, &self.row(xi).transpose());
        }
        out
    }

    /// Piecewise-linear second derivative at `x` for coefficients `beta`
    /// (zero outside the knot range).
    pub fn second_derivative(&self, beta: &DVector<f64>, x: f64) -> f64 {
        let kn = &self.knots.knots;
        if x < kn[0] || x > kn[kn.len() - 1] {
            return 0.0;
        }
        let delta = &self.second * beta;
        let j = locate(kn, x);
        let h = kn[j + 1] - kn[j];
        ((kn[j + 1] - x) * delta[j] + (x - kn[j]) * delta[j + 1]) / h
    }

    pub fn block(&self, x: &[f64]) -> BasisBlock {
        BasisBlock {
            design: self.design(x),
            penalty: self.penalty.clone(),
            knots: Some(self.knots.clone()),
            transform: None,
        }
    }
}

/// Cyclic cubic regression spline. The last knot is the wrap point and
/// carries no coefficient of its own, so there are `K − 1` coefficients.
#[derive(Debug, Clone)]
pub struct CyclicCrsBasis {
    knots: KnotSet,
    period: f64,
    second: DMatrix<f64>,
    penalty: DMatrix<f64>,
}

impl CyclicCrsBasis {
    pub fn new(knots: &KnotSet, period: f64) -> Result<Self> {
        if knots.kind != KnotKind::Cyclic {
            return Err(ApcError::Config("cyclic spline needs cyclic knots".into()));
        }
        if knots.len() < 4 {
            return Err(ApcError::Config(format!("cyclic spline needs at least 4 knots, got {}", knots.len())));
        }
        if period.is_nan() || period <= 0.0 {
            return Err(ApcError::Config("period must be positive".into()));
        }
        let span = knots.last() - knots.first();
        if (span - period).abs() > 1e-9 * period {
            return Err(ApcError::Config(format!(
                "cyclic knots span {span} but period is {period}"
            )));
        }
        let h = spacings(&knots.knots);
        let n = knots.len() - 1;
        let mut d = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, n);
        for j in 0..n {
            let prev = (j + n - 1) % n;
            let next = (j + 1) % n;
            let hp = h[prev];
            let hj = h[j];
            b[(j, j)] += (hp + hj) / 3.0;
            b[(j, next)] += hj / 6.0;
            b[(j, prev)] += hp / 6.0;
            d[(j, prev)] += 1.0 / hp;
            d[(j, j)] += -1.0 / hp - 1.0 / hj;
            d[(j, next)] += 1.0 / hj;
        }
        let chol = b
            .cholesky()
            .ok_or_else(|| ApcError::Numerical("cyclic spacing matrix is not positive definite".into()))?;
        let second = chol.solve(&d);
        let mut penalty = d.transpose() * &second;
        symmetrize(&mut penalty);
        Ok(Self { knots: knots.clone(), period, second, penalty })
    }

    pub fn dim(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn penalty(&self) -> &DMatrix<f64> {
        &self.penalty
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    fn wrap(&self, x: f64) -> f64 {
        let x0 = self.knots.first();
        let mut t = (x - x0).rem_euclid(self.period);
        if t >= self.period {
            t = 0.0;
        }
        x0 + t
    }

    pub fn row(&self, x: f64) -> DVector<f64> {
        let n = self.dim();
        let kn = &self.knots.knots;
        let xw = self.wrap(x);
        let j = locate(kn, xw).min(n - 1);
        let next = (j + 1) % n;
        let (am, ap, cm, cp) = local_weights(kn[j], kn[j + 1] - kn[j], xw);
        let mut row = DVector::zeros(n);
        row[j] += am;
        row[next] += ap;
        for c in 0..n {
            row[c] += cm * self.second[(j, c)] + cp * self.second[(next, c)];
        }
        row
    }

    pub fn design(&self, x: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(x.len(), self.dim());
        for (i, &xi) in x.iter().enumerate() {
            out.set_row(i, &self.row(xi).transpose());
        }
        out
    }

    pub fn second_derivative(&self, beta: &DVector<f64>, x: f64) -> f64 {
        let n = self.dim();
        let kn = &self.knots.knots;
        let xw = self.wrap(x);
        let j = locate(kn, xw).min(n - 1);
        let delta = &self.second * beta;
        let h = kn[j + 1] - kn[j];
        ((kn[j + 1] - xw) * delta[j] + (xw - kn[j]) * delta[(j + 1) % n]) / h
    }

    pub fn block(&self, x: &[f64]) -> BasisBlock {
        BasisBlock {
            design: self.design(x),
            penalty: self.penalty.clone(),
            knots: Some(self.knots.clone()),
            transform: None,
        }
    }
}

pub fn crs_basis(x: &[f64], knots: &KnotSet) -> Result<BasisBlock> {
    Ok(CrsBasis::new(knots)?.block(x))
}

pub fn cyclic_crs_basis(x: &[f64], knots: &KnotSet, period: f64) -> Result<BasisBlock> {
    Ok(CyclicCrsBasis::new(knots, period)?.block(x))
}

/// Interpolating natural cubic spline.
#[derive(Debug, Clone)]
pub struct NaturalCubicSpline {
    knots: Vec<f64>,
    values: Vec<f64>,
    second: Vec<f64>,
}

pub fn natural_cubic_fit(knots: &KnotSet, values_at_knots: &[f64]) -> Result<NaturalCubicSpline> {
    if values_at_knots.len() != knots.len() {
        return Err(ApcError::Dimension(format!(
            "{} knots but {} values",
            knots.len(),
            values_at_knots.len()
        )));
    }
    let basis = CrsBasis::new(&KnotSet { knots: knots.knots.clone(), kind: KnotKind::Standard })?;
    let beta = DVector::from_column_slice(values_at_knots);
    let second = (&basis.second * &beta).iter().copied().collect();
    Ok(NaturalCubicSpline { knots: knots.knots.clone(), values: values_at_knots.to_vec(), second })
}

impl NaturalCubicSpline {
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn value(&self, x: f64) -> f64 {
        let k = self.knots.len();
        if x < self.knots[0] {
            return self.values[0] + (x - self.knots[0]) * self.first_derivative(self.knots[0]);
        }
        if x > self.knots[k - 1] {
            return self.values[k - 1] + (x - self.knots[k - 1]) * self.first_derivative(self.knots[k - 1]);
        }
        let j = locate(&self.knots, x);
        let (am, ap, cm, cp) = local_weights(self.knots[j], self.knots[j + 1] - self.knots[j], x);
        am * self.values[j] + ap * self.values[j + 1] + cm * self.second[j] + cp * self.second[j + 1]
    }

    pub fn first_derivative(&self, x: f64) -> f64 {
        let k = self.knots.len();
        let xc = x.clamp(self.knots[0], self.knots[k - 1]);
        let j = locate(&self.knots, xc);
        let h = self.knots[j + 1] - self.knots[j];
        let right = self.knots[j + 1] - xc;
        let left = xc - self.knots[j];
        (self.values[j + 1] - self.values[j]) / h
            + (-3.0 * right * right / h + h) / 6.0 * self.second[j]
            + (3.0 * left * left / h - h) / 6.0 * self.second[j + 1]
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        let k = self.knots.len();
        if x < self.knots[0] || x > self.knots[k - 1] {
            return 0.0;
        }
        let j = locate(&self.knots, x);
        let h = self.knots[j + 1] - self.knots[j];
        ((self.knots[j + 1] - x) * self.second[j] + (x - self.knots[j]) * self.second[j + 1]) / h
    }

    /// Constant third derivative on interval `j`.
    pub fn third_derivative_on(&self, j: usize) -> f64 {
        (self.second[j + 1] - self.second[j]) / (self.knots[j + 1] - self.knots[j])
    }

    /// Exact `∫ f''²` over the knot range.
    pub fn roughness(&self) -> f64 {
        self.knots
            .windows(2)
            .enumerate()
            .map(|(j, w)| {
                let h = w[1] - w[0];
                let (a, b) = (self.second[j], self.second[j + 1]);
                h / 3.0 * (a * a + a * b + b * b)
            })
            .sum()
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sorted_eigenvalues;

    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
        let c = 0.5 * (a + b);
        let whole = (b - a) / 6.0 * (f(a) + 4.0 * f(c) + f(b));
        adaptive(f, a, b, whole, tol, depth)
    }

    fn adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, whole: f64, tol: f64, depth: usize) -> f64 {
        let c = 0.5 * (a + b);
        let l = (c - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + c)) + f(c));
        let r = (b - c) / 6.0 * (f(c) + 4.0 * f(0.5 * (c + b)) + f(b));
        if depth == 0 || (l + r - whole).abs() <= 15.0 * tol {
            return l + r + (l + r - whole) / 15.0;
        }
        adaptive(f, a, c, l, tol / 2.0, depth - 1) + adaptive(f, c, b, r, tol / 2.0, depth - 1)
    }

    /// Quadrature of ∫ b_i'' b_j'' knot interval by knot interval.
    fn quadrature_penalty<F: Fn(&DVector<f64>, f64) -> f64>(q: usize, knots: &[f64], d2: F) -> DMatrix<f64> {
        DMatrix::from_fn(q, q, |i, j| {
            let mut ei = DVector::zeros(q);
            ei[i] = 1.0;
            let mut ej = DVector::zeros(q);
            ej[j] = 1.0;
            knots
                .windows(2)
                .map(|w| {
                    let eps = 1e-12 * (w[1] - w[0]);
                    simpson(&|x| d2(&ei, x) * d2(&ej, x), w[0] + eps, w[1] - eps, 1e-14, 30)
                })
                .sum()
        })
    }

    #[test]
    fn default_knots_examples() {
        let vals: Vec<f64> = (0..60).map(|i| i as f64 + 0.5).collect();
        let k = default_knots(&vals, 15).unwrap();
        assert_eq!(k.len(), 15);
        assert_eq!(k.first(), 0.5);
        assert_eq!(k.last(), 59.5);
        assert_eq!(default_knots(&[1.0, 2.0, 3.0], 3).unwrap().knots, vec![1.0, 2.0, 3.0]);
        let vals: Vec<f64> = (1..=20).map(|i| i as f64).collect();
        assert_eq!(default_knots(&vals, 19).unwrap().len(), 19);
        assert!(default_knots(&[1.0, 2.0], 3).is_err());
        assert!(default_knots(&[1.0, 2.0, 3.0, 3.0], 4).is_err());
    }

    #[test]
    fn knot_count_rule() {
        assert_eq!(default_knot_count(60), 15);
        assert_eq!(default_knot_count(20), 5);
        assert_eq!(default_knot_count(79), 20);
        assert_eq!(default_knot_count(12), 3);
        assert_eq!(default_knot_count(4), 3);
    }

    #[test]
    fn design_at_knots_is_identity() {
        let knots = KnotSet::new(vec![0.0, 1.0, 2.5, 4.0, 7.0], KnotKind::Standard).unwrap();
        let block = crs_basis(&knots.knots, &knots).unwrap();
        assert!((block.design - DMatrix::identity(5, 5)).abs().max() < 1e-12);
    }

    #[test]
    fn penalty_annihilates_affine() {
        let knots = KnotSet::new(vec![0.0, 1.0, 2.0, 3.0], KnotKind::Standard).unwrap();
        let basis = CrsBasis::new(&knots).unwrap();
        let s = basis.penalty();
        let ones = DVector::from_element(4, 1.0);
        let lin = DVector::from_column_slice(&knots.knots);
        assert!((s * ones).amax() < 1e-12);
        assert!((s * lin).amax() < 1e-12);
    }

    #[test]
    fn penalty_matches_quadrature_three_knots() {
        let knots = KnotSet::new(vec![0.0, 1.0, 2.0], KnotKind::Standard).unwrap();
        let basis = CrsBasis::new(&knots).unwrap();
        let quad = quadrature_penalty(3, &knots.knots, |b, x| basis.second_derivative(b, x));
        let s = basis.penalty();
        let scale = s.amax();
        assert!((s - quad).amax() < 1e-8 * scale);
    }

    #[test]
    fn cyclic_penalty_matches_quadrature() {
        let knots = KnotSet::new(vec![0.0, 1.0, 2.5, 3.5, 5.0], KnotKind::Cyclic).unwrap();
        let basis = CyclicCrsBasis::new(&knots, 5.0).unwrap();
        let quad = quadrature_penalty(4, &knots.knots, |b, x| basis.second_derivative(b, x));
        let s = basis.penalty();
        assert!((s - &quad).amax() < 1e-8 * s.amax());
        assert!((s * DVector::from_element(4, 1.0)).amax() < 1e-12);
    }

    #[test]
    fn cyclic_rows_repeat_with_period() {
        let knots = KnotSet::cyclic_uniform(0.5, 5.0, 5).unwrap();
        let basis = CyclicCrsBasis::new(&knots, 5.0).unwrap();
        for x in [0.5, 1.3, 2.5, 4.9, 5.4] {
            let d = basis.row(x) - basis.row(x + 5.0);
            assert!(d.amax() < 1e-12);
            let d = basis.row(x) - basis.row(x - 10.0);
            assert!(d.amax() < 1e-12);
        }
    }

    #[test]
    fn cyclic_smooth_across_wrap() {
        let knots = KnotSet::new(vec![0.0, 1.0, 2.0, 3.5, 5.0], KnotKind::Cyclic).unwrap();
        let basis = CyclicCrsBasis::new(&knots, 5.0).unwrap();
        let beta = DVector::from_vec(vec![0.3, -1.0, 2.0, 0.7]);
        let f = |x: f64| basis.row(x).dot(&beta);
        let eps = 1e-5;
        // value, slope and curvature continuous at the wrap point 5 ≡ 0
        assert!((f(5.0 - 1e-9) - f(5.0)).abs() < 1e-7);
        let left_slope = (f(5.0 - eps) - f(5.0 - 2.0 * eps)) / eps;
        let right_slope = (f(5.0 + 2.0 * eps) - f(5.0 + eps)) / eps;
        assert!((left_slope - right_slope).abs() < 1e-3);
        let d2l = basis.second_derivative(&beta, 5.0 - 1e-9);
        let d2r = basis.second_derivative(&beta, 5.0 + 1e-9);
        assert!((d2l - d2r).abs() < 1e-6);
    }

    #[test]
    fn too_few_knots_rejected() {
        let k = KnotSet::new(vec![0.0, 1.0, 2.0], KnotKind::Cyclic).unwrap();
        assert!(CyclicCrsBasis::new(&k, 2.0).is_err());
        assert!(KnotSet::new(vec![0.0, 1.0], KnotKind::Standard).is_err());
    }

    #[test]
    fn penalty_null_space_dimensions() {
        let knots = KnotSet::new((0..8).map(|i| (i * i) as f64 * 0.3 + i as f64).collect(), KnotKind::Standard).unwrap();
        let ev = sorted_eigenvalues(CrsBasis::new(&knots).unwrap().penalty());
        let top = *ev.last().unwrap();
        assert_eq!(ev.iter().filter(|&&e| e.abs() < 1e-10 * top).count(), 2);
        assert!(ev.iter().all(|&e| e >= -1e-10 * top));
        let cknots = KnotSet::cyclic_uniform(0.0, 6.0, 6).unwrap();
        let ev = sorted_eigenvalues(CyclicCrsBasis::new(&cknots, 6.0).unwrap().penalty());
        let top = *ev.last().unwrap();
        assert_eq!(ev.iter().filter(|&&e| e.abs() < 1e-10 * top).count(), 1);
    }

    #[test]
    fn linear_extrapolation_beyond_boundary() {
        let knots = KnotSet::new(vec![0.0, 1.0, 3.0, 4.0], KnotKind::Standard).unwrap();
        let basis = CrsBasis::new(&knots).unwrap();
        let beta = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let f = |x: f64| basis.row(x).dot(&beta);
        for (a, b, c) in [(-3.0, -2.0, -1.0), (5.0, 6.0, 7.0)] {
            assert!((f(a) - 2.0 * f(b) + f(c)).abs() < 1e-12);
        }
        // continuity of value and slope at the boundary
        let eps = 1e-6;
        let inner = (f(eps) - f(0.0)) / eps;
        let outer = (f(0.0) - f(-eps)) / eps;
        assert!((inner - outer).abs() < 1e-4);
        let inner = (f(4.0) - f(4.0 - eps)) / eps;
        let outer = (f(4.0 + eps) - f(4.0)) / eps;
        assert!((inner - outer).abs() < 1e-4);
    }

    #[test]
    fn natural_fit_boundary_and_affine() {
        let knots = KnotSet::new(vec![0.0, 1.0, 2.0, 4.0, 5.0], KnotKind::Standard).unwrap();
        let affine: Vec<f64> = knots.knots.iter().map(|x| 2.0 - 0.5 * x).collect();
        let s = natural_cubic_fit(&knots, &affine).unwrap();
        for x in [0.0, 0.3, 1.7, 3.0, 5.0] {
            assert!(s.second_derivative(x).abs() < 1e-12);
        }
        let vals = vec![1.0, -1.0, 2.0, 0.0, 3.0];
        let s = natural_cubic_fit(&knots, &vals).unwrap();
        assert_eq!(s.second_derivative(0.0), 0.0);
        assert_eq!(s.second_derivative(5.0), 0.0);
        for (x, v) in knots.knots.iter().zip(&vals) {
            assert!((s.value(*x) - v).abs() < 1e-12);
        }
        assert!(natural_cubic_fit(&knots, &vals[..4]).is_err());
    }

    #[test]
    fn natural_fit_of_sine_roughness() {
        let n = 41;
        let knots: Vec<f64> = (0..n).map(|i| std::f64::consts::PI * 2.0 * i as f64 / (n - 1) as f64).collect();
        let ks = KnotSet::new(knots.clone(), KnotKind::Standard).unwrap();
        let vals: Vec<f64> = knots.iter().map(|x| x.sin()).collect();
        let s = natural_cubic_fit(&ks, &vals).unwrap();
        // ∫_0^{2π} sin² = π
        let exact = std::f64::consts::PI;
        assert!((s.roughness() - exact).abs() < 0.05 * exact);
    }
}
