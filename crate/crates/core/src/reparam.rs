//! Null-space reparameterization of basis blocks.
//!
//! A constraint `C β = 0` (r×q, full row rank) is absorbed by writing
//! `β = Z γ` with `Z` the trailing `q − r` columns of the orthogonal factor
//! of `Cᵀ`. The block then uses `X Z` as its design and `Zᵀ S Z` as its
//! penalty.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::BasisBlock;
use crate::error::{ApcError, Result};
use crate::linalg::Qr;

const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullSpaceTransform {
    pub z: DMatrix<f64>,
    pub constraint: DMatrix<f64>,
    pub removed: usize,
}

impl NullSpaceTransform {
    pub fn input_dim(&self) -> usize {
        self.z.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.z.ncols()
    }

    /// Chains `self` followed by `next` into a single transform.
    pub fn then(&self, next: &NullSpaceTransform) -> NullSpaceTransform {
        let z = &self.z * &next.z;
        let lifted = &next.constraint * self.z.transpose();
        let mut constraint = DMatrix::zeros(self.constraint.nrows() + lifted.nrows(), self.z.nrows());
        constraint.rows_mut(0, self.constraint.nrows()).copy_from(&self.constraint);
        constraint.rows_mut(self.constraint.nrows(), lifted.nrows()).copy_from(&lifted);
        NullSpaceTransform { z, constraint, removed: self.removed + next.removed }
    }
}

/// Orthonormal basis for the null space of `constraint` (r×q).
pub fn null_space(constraint: &DMatrix<f64>) -> Result<NullSpaceTransform> {
    let (r, q) = constraint.shape();
    if r >= q {
        return Err(ApcError::Config(format!(
            "constraint with {r} rows leaves no free coefficients out of {q}"
        )));
    }
    let qr = Qr::new(constraint.transpose(), RANK_TOL);
    let diag = qr.r_diagonal();
    let top = diag.iter().fold(0.0_f64, |m, d| m.max(d.abs()));
    let detected = diag.iter().filter(|d| d.abs() > RANK_TOL * top).count();
    if qr.rank() < r || detected < r {
        return Err(ApcError::RankDeficient { expected: r, detected: detected.min(qr.rank()) });
    }
    let full_q = qr.q_columns(q);
    let z = full_q.columns(r, q - r).into_owned();
    Ok(NullSpaceTransform { z, constraint: constraint.clone(), removed: r })
}

/// `design ← design·Z`, `penalty ← Zᵀ·penalty·Z`; the transform is recorded
/// (composed with any earlier one).
pub fn apply_transform(block: &BasisBlock, t: &NullSpaceTransform) -> Result<BasisBlock> {
    if t.input_dim() != block.ncols() {
        return Err(ApcError::Dimension(format!(
            "transform expects {} columns, block has {}",
            t.input_dim(),
            block.ncols()
        )));
    }
    let design = &block.design * &t.z;
    let mut penalty = t.z.transpose() * &block.penalty * &t.z;
    let pt = penalty.transpose();
    penalty = (penalty + pt) * 0.5;
    let transform = match &block.transform {
        Some(prev) => prev.then(t),
        None => t.clone(),
    };
    Ok(BasisBlock { design, penalty, knots: block.knots.clone(), transform: Some(transform) })
}

/// Centres `x` and scales it to unit half-range.
pub fn standardize(x: &[f64]) -> Vec<f64> {
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let centre = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let scale = if half > 0.0 { half } else { 1.0 };
    x.iter().map(|v| (v - centre) / scale).collect()
}

/// Constraint rows `[1 : x]ᵀ X` (x standardized first).
pub fn linear_constraint(design: &DMatrix<f64>, x: &[f64]) -> Result<DMatrix<f64>> {
    if x.len() != design.nrows() {
        return Err(ApcError::Dimension(format!(
            "covariate has {} values, design has {} rows",
            x.len(),
            design.nrows()
        )));
    }
    let xs = DVector::from_vec(standardize(x));
    let ones = DVector::from_element(x.len(), 1.0);
    let mut c = DMatrix::zeros(2, design.ncols());
    c.set_row(0, &(ones.transpose() * design));
    c.set_row(1, &(xs.transpose() * design));
    Ok(c)
}

/// Sum-to-zero reparameterization: `1ᵀ X β = 0`.
pub fn sum_to_zero(block: &BasisBlock) -> Result<BasisBlock> {
    let ones = DVector::from_element(block.design.nrows(), 1.0);
    let c = ones.transpose() * &block.design;
    let t = null_space(&DMatrix::from_row_slice(1, c.ncols(), c.as_slice()))?;
    apply_transform(block, &t)
}

/// Removes the intercept and the linear trend in `x` from the block.
/// A block that already satisfies both constraints is returned unchanged.
pub fn orthogonalize_to_linear(block: &BasisBlock, x: &[f64]) -> Result<BasisBlock> {
    let c = linear_constraint(&block.design, x)?;
    let scale = block.design.amax().max(1.0) * (x.len() as f64);
    if c.amax() <= 1e-10 * scale {
        return Ok(block.clone());
    }
    let t = null_space(&c)?;
    apply_transform(block, &t)
}
