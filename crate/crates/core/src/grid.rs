//! Age/period/cohort index geometry.
//!
//! Indices are 1-based everywhere in the public API: age `a ∈ [1, A]`,
//! period `p ∈ [1, P]` and cohort `c ∈ [1, C]` with `c = M(A − a) + p`,
//! so cohort 1 is the oldest age group observed in the first period.

use serde::{Deserialize, Serialize};

use crate::error::{ApcError, Result};

/// Cohort index of the cell `(a, p)` for `A` age groups and interval ratio `M`.
pub fn cohort_index(a: usize, p: usize, n_age: usize, ratio: usize) -> Result<usize> {
    if ratio == 0 {
        return Err(ApcError::Domain("interval ratio M must be at least 1".into()));
    }
    if a == 0 || a > n_age {
        return Err(ApcError::Domain(format!("age index {a} outside [1, {n_age}]")));
    }
    if p == 0 {
        return Err(ApcError::Domain("period index must be at least 1".into()));
    }
    Ok(ratio * (n_age - a) + p)
}

/// A cell of the age-period table together with its cohort.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellIndex {
    pub a: usize,
    pub p: usize,
    pub c: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalGrid {
    pub n_age: usize,
    pub n_period: usize,
    pub ratio: usize,
    pub n_cohort: usize,
    pub age_midpoints: Vec<f64>,
    pub period_midpoints: Vec<f64>,
    pub cohort_midpoints: Vec<f64>,
    pub age_width: f64,
    pub period_width: f64,
}

impl TemporalGrid {
    /// Builds the grid from interval starts and widths. Midpoints are
    /// interval centres; the cohort of a cell is `period − age` on the time
    /// scale, which runs in steps of `period_width` over `1..=C`.
    pub fn new(
        n_age: usize,
        n_period: usize,
        ratio: usize,
        age_start: f64,
        age_width: f64,
        period_start: f64,
        period_width: f64,
    ) -> Result<Self> {
        if n_age == 0 || n_period == 0 || ratio == 0 {
            return Err(ApcError::Config(format!(
                "A, P and M must be positive (got A={n_age}, P={n_period}, M={ratio})"
            )));
        }
        if !(age_width > 0.0 && period_width > 0.0) || !age_start.is_finite() || !period_start.is_finite() {
            return Err(ApcError::Config("interval widths must be positive and starts finite".into()));
        }
        let expected = ratio as f64 * period_width;
        if (age_width - expected).abs() > 1e-9 * expected.max(1.0) {
            return Err(ApcError::Config(format!(
                "age width {age_width} is not M × period width ({ratio} × {period_width})"
            )));
        }
        let age_midpoints: Vec<f64> =
            (0..n_age).map(|i| age_start + (i as f64 + 0.5) * age_width).collect();
        let period_midpoints: Vec<f64> =
            (0..n_period).map(|j| period_start + (j as f64 + 0.5) * period_width).collect();
        let n_cohort = ratio * (n_age - 1) + n_period;
        // cohort 1 = first period, oldest age
        let first_cohort = period_midpoints[0] - age_midpoints[n_age - 1];
        let cohort_midpoints: Vec<f64> =
            (0..n_cohort).map(|k| first_cohort + k as f64 * period_width).collect();
        Ok(Self {
            n_age,
            n_period,
            ratio,
            n_cohort,
            age_midpoints,
            period_midpoints,
            cohort_midpoints,
            age_width,
            period_width,
        })
    }

    /// Unit-width grid starting at zero for both dimensions' index scale.
    pub fn with_ratio(n_age: usize, n_period: usize, ratio: usize) -> Result<Self> {
        Self::new(n_age, n_period, ratio, 0.0, ratio as f64, 0.0, 1.0)
    }

    pub fn cohort_of(&self, a: usize, p: usize) -> Result<usize> {
        if p > self.n_period {
            return Err(ApcError::Domain(format!("period index {p} outside [1, {}]", self.n_period)));
        }
        cohort_index(a, p, self.n_age, self.ratio)
    }

    pub fn cell(&self, a: usize, p: usize) -> Result<CellIndex> {
        Ok(CellIndex { a, p, c: self.cohort_of(a, p)? })
    }

    /// All cells in age-major order (age 1 first, periods increasing).
    pub fn cells(&self) -> Vec<CellIndex> {
        let mut out = Vec::with_capacity(self.n_age * self.n_period);
        for a in 1..=self.n_age {
            for p in 1..=self.n_period {
                out.push(CellIndex { a, p, c: self.ratio * (self.n_age - a) + p });
            }
        }
        out
    }

    pub fn n_cells(&self) -> usize {
        self.n_age * self.n_period
    }

    /// Printed-table layout: rows from the oldest age down to age 1, one
    /// column per period.
    pub fn cohort_table(&self) -> Vec<Vec<usize>> {
        (1..=self.n_age)
            .rev()
            .map(|a| (1..=self.n_period).map(|p| self.ratio * (self.n_age - a) + p).collect())
            .collect()
    }
}
