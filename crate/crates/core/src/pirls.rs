//! Penalized iteratively re-weighted least squares.
//!
//! Minimizes `D(β) + Σ_b λ_b βᵀ S_b β` for canonical-link families. Each
//! step solves the penalized weighted least-squares problem through the
//! stacked system `[R; E]`, where `RᵀR = XᵀWX` and `EᵀE = Σ λ_b S_b`, so the
//! smoothing penalty never has to be inverted directly.
//!
//! Columns that are aliased in `[X; E]` (exactly dependent on earlier
//! columns even after penalization) are removed before iterating and get a
//! zero coefficient, matching the usual GLM convention for rank-deficient
//! designs.

use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::design::ApcDesign;
use crate::error::{ApcError, Result};
use crate::family::{Family, FamilyKind};
use crate::linalg::{back_substitute, forward_substitute_transpose, psd_root, Qr};

/// Convergence settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitControl {
    /// Relative change in penalized deviance that counts as converged.
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Relative tolerance for declaring a column aliased.
    pub rank_tol: f64,
}

impl Default for FitControl {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 200, max_halvings: 30, rank_tol: 1e-7 }
    }
}

#[derive(Debug, Clone)]
pub struct PenaltyBlock {
    pub columns: Range<usize>,
    pub matrix: DMatrix<f64>,
}

/// A design matrix with its penalty blocks, reduced to identifiable columns.
#[derive(Debug, Clone)]
pub struct PenalizedProblem {
    x: DMatrix<f64>,
    blocks: Vec<PenaltyBlock>,
    kept: Vec<usize>,
    xk: DMatrix<f64>,
    /// Unit-λ penalty roots restricted to kept columns, one per block.
    roots: Vec<DMatrix<f64>>,
}

impl PenalizedProblem {
    pub fn new(x: DMatrix<f64>, blocks: Vec<PenaltyBlock>, rank_tol: f64) -> Result<Self> {
        let p = x.ncols();
        for b in &blocks {
            if b.columns.end > p || b.matrix.nrows() != b.columns.len() || b.matrix.ncols() != b.columns.len() {
                return Err(ApcError::Dimension(format!(
                    "penalty of size {}×{} does not fit columns {:?} of a {p}-column design",
                    b.matrix.nrows(),
                    b.matrix.ncols(),
                    b.columns
                )));
            }
        }
        let full_roots: Vec<DMatrix<f64>> = blocks
            .iter()
            .map(|b| {
                let r = psd_root(&b.matrix);
                let mut full = DMatrix::zeros(r.nrows(), p);
                full.columns_mut(b.columns.start, b.columns.len()).copy_from(&r);
                full
            })
            .collect();
        let m: usize = full_roots.iter().map(|r| r.nrows()).sum();
        let mut stacked = DMatrix::zeros(x.nrows() + m, p);
        stacked.rows_mut(0, x.nrows()).copy_from(&x);
        let mut row = x.nrows();
        for r in &full_roots {
            stacked.rows_mut(row, r.nrows()).copy_from(r);
            row += r.nrows();
        }
        let kept = Qr::new(stacked, rank_tol).kept().to_vec();
        let xk = x.select_columns(kept.iter());
        let roots = full_roots.iter().map(|r| r.select_columns(kept.iter())).collect();
        Ok(Self { x, blocks, kept, xk, roots })
    }

    pub fn from_design(design: &ApcDesign, rank_tol: f64) -> Result<Self> {
        let blocks = design
            .penalties()
            .into_iter()
            .map(|p| PenaltyBlock { columns: p.columns, matrix: p.matrix.clone() })
            .collect();
        Self::new(design.x.clone(), blocks, rank_tol)
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }

    pub fn nrows(&self) -> usize {
        self.x.nrows()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Indices of columns that were dropped as aliased.
    pub fn aliased(&self) -> Vec<usize> {
        (0..self.ncols()).filter(|j| !self.kept.contains(j)).collect()
    }

    fn check_lambdas(&self, lambdas: &[f64]) -> Result<()> {
        if lambdas.len() != self.blocks.len() {
            return Err(ApcError::Dimension(format!(
                "{} smoothing parameters for {} penalties",
                lambdas.len(),
                self.blocks.len()
            )));
        }
        if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(ApcError::Config("smoothing parameters must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// `E` for the given smoothing parameters, on kept columns.
    fn penalty_root(&self, lambdas: &[f64]) -> DMatrix<f64> {
        let m: usize = self.roots.iter().map(|r| r.nrows()).sum();
        let mut e = DMatrix::zeros(m, self.kept.len());
        let mut row = 0;
        for (r, &l) in self.roots.iter().zip(lambdas) {
            let s = l.sqrt();
            e.rows_mut(row, r.nrows()).copy_from(&(r * s));
            row += r.nrows();
        }
        e
    }

    fn expand(&self, beta_k: &DVector<f64>) -> DVector<f64> {
        let mut beta = DVector::zeros(self.ncols());
        for (c, &j) in self.kept.iter().enumerate() {
            beta[j] = beta_k[c];
        }
        beta
    }

    fn reduce(&self, beta: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.kept.len(), self.kept.iter().map(|&j| beta[j]))
    }

    /// Weighted normal-equation factor: returns (R with RᵀR = XᵀWX, Xᵀ W z).
    fn weighted_factor(&self, w: &[f64], z: Option<&[f64]>) -> Result<(DMatrix<f64>, Option<DVector<f64>>)> {
        let mut xw = self.xk.clone();
        for (i, &wi) in w.iter().enumerate() {
            let s = wi.sqrt();
            xw.row_mut(i).scale_mut(s);
        }
        let g = xw.tr_mul(&xw);
        let rhs = z.map(|z| {
            let wz = DVector::from_iterator(w.len(), w.iter().zip(z).map(|(wi, zi)| wi.sqrt() * zi));
            xw.tr_mul(&wz)
        });
        let r = match g.clone().cholesky() {
            Some(ch) => ch.l().transpose(),
            None => {
                let root = psd_root(&g);
                if root.nrows() == 0 {
                    return Err(ApcError::Numerical("weighted design is identically zero".into()));
                }
                root
            }
        };
        Ok((r, rhs))
    }

    /// Solves the penalized weighted problem; returns (β on kept columns, R₂, R).
    fn penalized_solve(
        &self,
        w: &[f64],
        z: &[f64],
        e: &DMatrix<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let (r, rhs) = self.weighted_factor(w, Some(z))?;
        let rhs = rhs.expect("rhs requested");
        let k = self.kept.len();
        let mut stacked = DMatrix::zeros(r.nrows() + e.nrows(), k);
        stacked.rows_mut(0, r.nrows()).copy_from(&r);
        stacked.rows_mut(r.nrows(), e.nrows()).copy_from(e);
        let qr = Qr::new(stacked, 0.0);
        if qr.rank() < k {
            return Err(ApcError::Numerical("penalized system is singular".into()));
        }
        let r2 = qr.r();
        let diag_max = r2.diagonal().amax();
        if r2.diagonal().iter().any(|d| d.abs() <= 1e-13 * diag_max) {
            return Err(ApcError::Numerical("penalized system is numerically singular".into()));
        }
        let t = forward_substitute_transpose(&r2, &rhs);
        let beta = back_substitute(&r2, &t);
        Ok((beta, r2, r))
    }

    /// Runs PIRLS at fixed smoothing parameters.
    pub fn fit(&self, y: &[f64], family: &Family, lambdas: &[f64], control: &FitControl) -> Result<PirlsResult> {
        self.fit_from(y, family, lambdas, control, None)
    }

    /// PIRLS started from the linear predictor of `start` when given.
    pub fn fit_from(
        &self,
        y: &[f64],
        family: &Family,
        lambdas: &[f64],
        control: &FitControl,
        start: Option<&DVector<f64>>,
    ) -> Result<PirlsResult> {
        let n = self.nrows();
        if y.len() != n {
            return Err(ApcError::Dimension(format!("response has {} rows, design has {n}", y.len())));
        }
        family.validate(y)?;
        self.check_lambdas(lambdas)?;
        let e = self.penalty_root(lambdas);
        let offsets: Vec<f64> = (0..n).map(|i| family.offset(i)).collect();

        let mut eta: Vec<f64> = match start {
            Some(b) => {
                let lin = &self.x * b;
                (0..n).map(|i| lin[i] + offsets[i]).collect()
            }
            None => (0..n).map(|i| family.initial_eta(i, y[i])).collect(),
        };
        let mut beta_old: Option<DVector<f64>> = start.map(|b| self.reduce(b));
        let mut pdev_old = match &beta_old {
            Some(b) => self.penalized_deviance_k(b, y, family, &e, &offsets).1,
            None => f64::INFINITY,
        };
        let mut trace = Vec::new();
        let mut converged = false;
        let mut iterations = 0;
        let mut dev = f64::NAN;
        let mut pdev = f64::NAN;

        for iter in 1..=control.max_iter {
            iterations = iter;
            let mut w = Vec::with_capacity(n);
            let mut z = Vec::with_capacity(n);
            for i in 0..n {
                let (wi, zi) = family.working(i, y[i], eta[i]);
                w.push(wi);
                z.push(zi);
            }
            let (mut beta_new, _, _) = self.penalized_solve(&w, &z, &e)?;
            let (mut d_new, mut p_new) = self.penalized_deviance_k(&beta_new, y, family, &e, &offsets);
            if let Some(old) = &beta_old {
                let mut halvings = 0;
                while !(p_new.is_finite() && p_new <= pdev_old + 1e-12 * pdev_old.abs().max(1.0)) {
                    if halvings == control.max_halvings {
                        break;
                    }
                    beta_new = (&beta_new + old) * 0.5;
                    let r = self.penalized_deviance_k(&beta_new, y, family, &e, &offsets);
                    d_new = r.0;
                    p_new = r.1;
                    halvings += 1;
                }
                if !p_new.is_finite() {
                    return Err(ApcError::Numerical(format!(
                        "non-finite deviance after {} step halvings",
                        control.max_halvings
                    )));
                }
                if p_new > pdev_old + 1e-12 * pdev_old.abs().max(1.0) {
                    // step halving could not reduce the objective: keep the last iterate
                    log::warn!("PIRLS stalled after {} step halvings at iteration {iter}", control.max_halvings);
                    dev = self.penalized_deviance_k(old, y, family, &e, &offsets).0;
                    pdev = pdev_old;
                    break;
                }
            } else if !p_new.is_finite() {
                return Err(ApcError::Numerical("non-finite deviance at the first PIRLS step".into()));
            }
            let lin = &self.xk * &beta_new;
            eta = (0..n).map(|i| lin[i] + offsets[i]).collect();
            dev = d_new;
            pdev = p_new;
            trace.push(p_new);
            let done = beta_old.is_some() && (pdev_old - p_new).abs() < control.tol * (p_new.abs() + 0.1);
            beta_old = Some(beta_new);
            pdev_old = p_new;
            if done {
                converged = true;
                break;
            }
        }

        let beta_k = beta_old.ok_or_else(|| ApcError::Numerical("no PIRLS iteration completed".into()))?;
        let beta = self.expand(&beta_k);
        let edf = self.edf_at(&beta, family, lambdas)?;
        let lin = &self.x * &beta;
        let mu: Vec<f64> = (0..n).map(|i| family.mean(i, lin[i] + offsets[i])).collect();
        if family.kind == FamilyKind::Binomial {
            let boundary = (0..n).any(|i| {
                let p = mu[i] / family.trials_at(i);
                !(1e-8..=1.0 - 1e-8).contains(&p)
            });
            if boundary {
                log::warn!("fitted probabilities numerically 0 or 1: the data look separated");
                converged = false;
            }
        }
        Ok(PirlsResult {
            beta,
            eta: lin,
            mu,
            deviance: dev,
            penalized_deviance: pdev,
            edf,
            converged,
            iterations,
            trace,
            aliased: self.aliased(),
        })
    }

    fn penalized_deviance_k(
        &self,
        beta_k: &DVector<f64>,
        y: &[f64],
        family: &Family,
        e: &DMatrix<f64>,
        offsets: &[f64],
    ) -> (f64, f64) {
        let lin = &self.xk * beta_k;
        let mut dev = 0.0;
        for i in 0..y.len() {
            let mu = family.mean(i, lin[i] + offsets[i]);
            dev += family.unit_deviance(i, y[i], mu);
        }
        let pen = (e * beta_k).norm_squared();
        (dev, dev + pen)
    }

    /// Penalized deviance `D(β) + Σ λ_b βᵀS_bβ` at a full-length β.
    pub fn penalized_deviance(&self, beta: &DVector<f64>, y: &[f64], family: &Family, lambdas: &[f64]) -> f64 {
        let n = self.nrows();
        let lin = &self.x * beta;
        let mut dev = 0.0;
        for i in 0..n {
            let mu = family.mean(i, lin[i] + family.offset(i));
            dev += family.unit_deviance(i, y[i], mu);
        }
        let mut pen = 0.0;
        for (b, &l) in self.blocks.iter().zip(lambdas) {
            let sub = beta.rows(b.columns.start, b.columns.len());
            pen += l * (sub.transpose() * &b.matrix * sub)[(0, 0)];
        }
        dev + pen
    }

    /// Trace of the influence operator `X (XᵀWX + S_λ)⁻¹ XᵀW` at `beta`.
    pub fn edf_at(&self, beta: &DVector<f64>, family: &Family, lambdas: &[f64]) -> Result<f64> {
        self.check_lambdas(lambdas)?;
        let n = self.nrows();
        let lin = &self.x * beta;
        let w: Vec<f64> = (0..n).map(|i| family.working(i, 0.0, lin[i] + family.offset(i)).0).collect();
        let (r, _) = self.weighted_factor(&w, None)?;
        let e = self.penalty_root(lambdas);
        let k = self.kept.len();
        let mut stacked = DMatrix::zeros(r.nrows() + e.nrows(), k);
        stacked.rows_mut(0, r.nrows()).copy_from(&r);
        stacked.rows_mut(r.nrows(), e.nrows()).copy_from(&e);
        let qr = Qr::new(stacked, 0.0);
        if qr.rank() < k {
            return Err(ApcError::Numerical("penalized system is singular".into()));
        }
        let r2 = qr.r();
        // tr((R₂ᵀR₂)⁻¹ RᵀR) = ‖R R₂⁻¹‖²_F
        let sol = r2
            .transpose()
            .solve_lower_triangular(&r.transpose())
            .ok_or_else(|| ApcError::Numerical("penalized factor is singular".into()))?;
        Ok(sol.norm_squared())
    }

    /// Gradient of the penalized deviance with respect to β.
    pub fn gradient(&self, beta: &DVector<f64>, y: &[f64], family: &Family, lambdas: &[f64]) -> DVector<f64> {
        let n = self.nrows();
        let lin = &self.x * beta;
        let d = DVector::from_fn(n, |i, _| family.deviance_gradient(i, y[i], lin[i] + family.offset(i)));
        let mut g = self.x.tr_mul(&d);
        for (b, &l) in self.blocks.iter().zip(lambdas) {
            let sub = beta.rows(b.columns.start, b.columns.len()).into_owned();
            let s = &b.matrix * sub * (2.0 * l);
            let mut view = g.rows_mut(b.columns.start, b.columns.len());
            view += s;
        }
        g
    }
}

/// Raw output of a PIRLS run.
#[derive(Debug, Clone)]
pub struct PirlsResult {
    pub beta: DVector<f64>,
    /// Linear predictor without offset.
    pub eta: DVector<f64>,
    pub mu: Vec<f64>,
    pub deviance: f64,
    pub penalized_deviance: f64,
    pub edf: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Penalized deviance after each accepted step.
    pub trace: Vec<f64>,
    pub aliased: Vec<usize>,
}

/// A fitted APC model.
#[derive(Debug, Clone)]
pub struct FittedApcModel {
    pub beta: DVector<f64>,
    pub lambdas: Vec<f64>,
    pub deviance: f64,
    pub penalized_deviance: f64,
    pub edf: f64,
    pub converged: bool,
    pub iterations: usize,
    pub aliased: Vec<usize>,
    pub trace: Vec<f64>,
    /// GCV score at the selected smoothing parameters, when they were selected.
    pub gcv: Option<f64>,
    pub design: Arc<ApcDesign>,
    pub family: Family,
}

impl FittedApcModel {
    pub fn linear_predictor(&self) -> DVector<f64> {
        &self.design.x * &self.beta
    }

    /// True when the design could not identify every column.
    pub fn has_aliasing(&self) -> bool {
        !self.aliased.is_empty()
    }
}

/// Fits the APC design at fixed smoothing parameters (one per active penalty).
pub fn pirls_fit(design: &Arc<ApcDesign>, y: &[f64], family: &Family, lambdas: &[f64]) -> Result<FittedApcModel> {
    pirls_fit_with(design, y, family, lambdas, &FitControl::default())
}

pub fn pirls_fit_with(
    design: &Arc<ApcDesign>,
    y: &[f64],
    family: &Family,
    lambdas: &[f64],
    control: &FitControl,
) -> Result<FittedApcModel> {
    let problem = PenalizedProblem::from_design(design, control.rank_tol)?;
    let res = problem.fit(y, family, lambdas, control)?;
    Ok(model_from(res, design, family, lambdas.to_vec(), None))
}

pub(crate) fn model_from(
    res: PirlsResult,
    design: &Arc<ApcDesign>,
    family: &Family,
    lambdas: Vec<f64>,
    gcv: Option<f64>,
) -> FittedApcModel {
    FittedApcModel {
        beta: res.beta,
        lambdas,
        deviance: res.deviance,
        penalized_deviance: res.penalized_deviance,
        edf: res.edf,
        converged: res.converged,
        iterations: res.iterations,
        aliased: res.aliased,
        trace: res.trace,
        gcv,
        design: Arc::clone(design),
        family: family.clone(),
    }
}

/// Effective degrees of freedom of the design at `beta`.
pub fn effective_dof(design: &ApcDesign, family: &Family, lambdas: &[f64], beta: &DVector<f64>) -> Result<f64> {
    PenalizedProblem::from_design(design, FitControl::default().rank_tol)?.edf_at(beta, family, lambdas)
}
