//! Dense Householder QR with in-order rank detection, plus a few helpers
//! shared by the reparameterization and fitting code.
//!
//! Columns are processed left to right. A column whose remaining norm falls
//! below `tol × (its original norm)` is declared aliased and skipped, so the
//! retained set is always the earliest linearly independent columns.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

#[derive(Debug, Clone)]
pub struct Qr {
    /// Householder vectors stored column by column (`m` entries each, zero above the pivot row).
    reflectors: Vec<DVector<f64>>,
    betas: Vec<f64>,
    /// Transformed input: upper part of the retained columns is R.
    work: DMatrix<f64>,
    kept: Vec<usize>,
    dropped: Vec<usize>,
}

impl Qr {
    pub fn new(a: DMatrix<f64>, tol: f64) -> Self {
        let (m, n) = a.shape();
        let mut work = a;
        let norms: Vec<f64> = (0..n).map(|j| work.column(j).norm()).collect();
        let mut reflectors = Vec::new();
        let mut betas = Vec::new();
        let mut kept = Vec::new();
        let mut dropped = Vec::new();
        for j in 0..n {
            let k = kept.len();
            if k >= m {
                dropped.push(j);
                continue;
            }
            let tail_norm = work.view((k, j), (m - k, 1)).norm();
            if norms[j] == 0.0 || tail_norm <= tol * norms[j] {
                dropped.push(j);
                continue;
            }
            let alpha = work[(k, j)];
            let sign = if alpha >= 0.0 { 1.0 } else { -1.0 };
            let mut v = DVector::zeros(m);
            for i in k..m {
                v[i] = work[(i, j)];
            }
            v[k] += sign * tail_norm;
            let vnorm2 = v.rows(k, m - k).norm_squared();
            let beta = 2.0 / vnorm2;
            let vt = &v.as_slice()[k..m];
            let data = work.as_mut_slice();
            for col in j..n {
                let wc = &mut data[col * m + k..col * m + m];
                let dot: f64 = vt.iter().zip(wc.iter()).map(|(a, b)| a * b).sum();
                let f = beta * dot;
                if f != 0.0 {
                    for (w, a) in wc.iter_mut().zip(vt) {
                        *w -= f * a;
                    }
                }
            }
            reflectors.push(v);
            betas.push(beta);
            kept.push(j);
        }
        Self { reflectors, betas, work, kept, dropped }
    }

    pub fn rank(&self) -> usize {
        self.kept.len()
    }

    /// Indices of the retained columns, in original order.
    pub fn kept(&self) -> &[usize] {
        &self.kept
    }

    pub fn dropped(&self) -> &[usize] {
        &self.dropped
    }

    pub fn nrows(&self) -> usize {
        self.work.nrows()
    }

    /// Upper-triangular factor restricted to the retained columns (rank × rank).
    pub fn r(&self) -> DMatrix<f64> {
        let k = self.rank();
        let mut r = DMatrix::zeros(k, k);
        for (c, &j) in self.kept.iter().enumerate() {
            for i in 0..=c {
                r[(i, c)] = self.work[(i, j)];
            }
        }
        r
    }

    /// Diagonal of R, used for conditioning checks.
    pub fn r_diagonal(&self) -> Vec<f64> {
        self.kept.iter().enumerate().map(|(c, &j)| self.work[(c, j)]).collect()
    }

    /// Applies Qᵀ in place.
    pub fn apply_qt(&self, b: &mut DVector<f64>) {
        let m = self.nrows();
        for (k, (v, &beta)) in self.reflectors.iter().zip(&self.betas).enumerate() {
            let mut dot = 0.0;
            for i in k..m {
                dot += v[i] * b[i];
            }
            let f = beta * dot;
            for i in k..m {
                b[i] -= f * v[i];
            }
        }
    }

    /// Applies Q in place.
    pub fn apply_q(&self, b: &mut DVector<f64>) {
        let m = self.nrows();
        for (k, (v, &beta)) in self.reflectors.iter().zip(&self.betas).enumerate().rev() {
            let mut dot = 0.0;
            for i in k..m {
                dot += v[i] * b[i];
            }
            let f = beta * dot;
            for i in k..m {
                b[i] -= f * v[i];
            }
        }
    }

    /// First `cols` columns of the full orthogonal factor.
    pub fn q_columns(&self, cols: usize) -> DMatrix<f64> {
        let m = self.nrows();
        let mut q = DMatrix::zeros(m, cols);
        for c in 0..cols {
            let mut e = DVector::zeros(m);
            e[c] = 1.0;
            self.apply_q(&mut e);
            q.set_column(c, &e);
        }
        q
    }

    /// Least-squares coefficients for the retained columns; aliased
    /// columns receive zero.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut qtb = b.clone();
        self.apply_qt(&mut qtb);
        let k = self.rank();
        let r = self.r();
        let sol = back_substitute(&r, &qtb.rows(0, k).into_owned());
        let n = self.work.ncols();
        let mut out = DVector::zeros(n);
        for (c, &j) in self.kept.iter().enumerate() {
            out[j] = sol[c];
        }
        out
    }
}

/// Solves `R x = b` for upper-triangular `R`.
pub fn back_substitute(r: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = r.ncols();
    let mut x = DVector::zeros(n);
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in (i + 1)..n {
            s -= r[(i, j)] * x[j];
        }
        x[i] = s / r[(i, i)];
    }
    x
}

/// Solves `Rᵀ x = b` for upper-triangular `R`.
pub fn forward_substitute_transpose(r: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = r.ncols();
    let mut x = DVector::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for j in 0..i {
            s -= r[(j, i)] * x[j];
        }
        x[i] = s / r[(i, i)];
    }
    x
}

/// Returns `E` with `EᵀE = S` for a symmetric positive semidefinite `S`,
/// keeping only eigen-directions above `1e-12 ×` the largest eigenvalue.
pub fn psd_root(s: &DMatrix<f64>) -> DMatrix<f64> {
    let n = s.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let sym = (s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max_ev = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let keep: Vec<usize> = (0..n)
        .filter(|&i| eig.eigenvalues[i] > 1e-12 * max_ev && max_ev > 0.0)
        .collect();
    let mut root = DMatrix::zeros(keep.len(), n);
    for (row, &i) in keep.iter().enumerate() {
        let scale = eig.eigenvalues[i].sqrt();
        for j in 0..n {
            root[(row, j)] = scale * eig.eigenvectors[(j, i)];
        }
    }
    root
}

/// Symmetric eigenvalues in ascending order.
pub fn sorted_eigenvalues(s: &DMatrix<f64>) -> Vec<f64> {
    let sym = (s + s.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().cloned().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Numerical rank via in-order QR.
pub fn numerical_rank(a: &DMatrix<f64>, tol: f64) -> usize {
    Qr::new(a.clone(), tol).rank()
}

/// Residual of projecting `y` onto the column span of `a`.
pub fn projection_residual(a: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let qr = Qr::new(a.clone(), 1e-10);
    let mut t = y.clone();
    qr.apply_qt(&mut t);
    for i in 0..qr.rank() {
        t[i] = 0.0;
    }
    qr.apply_q(&mut t);
    t
}
