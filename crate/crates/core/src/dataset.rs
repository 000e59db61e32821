//! Model-ready tabular data: one row per observed (age, period) cell with a
//! response and a size column whose meaning depends on the family
//! (binomial trials, Poisson exposure, Gaussian cell weight).

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ApcError, Result};
use crate::family::{Family, FamilyKind};
use crate::grid::{CellIndex, TemporalGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApcDataset {
    pub grid: TemporalGrid,
    pub family: FamilyKind,
    pub cells: Vec<CellIndex>,
    pub response: Vec<f64>,
    pub size: Vec<f64>,
}

impl ApcDataset {
    pub fn new(grid: TemporalGrid, family: FamilyKind, cells: Vec<CellIndex>, response: Vec<f64>, size: Vec<f64>) -> Result<Self> {
        let d = Self { grid, family, cells, response, size };
        d.validate()?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.cells.len();
        if self.response.len() != n || self.size.len() != n {
            return Err(ApcError::Dimension(format!(
                "{n} cells, {} responses, {} sizes",
                self.response.len(),
                self.size.len()
            )));
        }
        for cell in &self.cells {
            let c = self.grid.cohort_of(cell.a, cell.p)?;
            if c != cell.c {
                return Err(ApcError::Domain(format!("cell ({}, {}) carries cohort {} instead of {c}", cell.a, cell.p, cell.c)));
            }
        }
        self.family().validate(&self.response)
    }

    pub fn family(&self) -> Family {
        match self.family {
            FamilyKind::Gaussian => Family::gaussian_weighted(self.size.clone()),
            FamilyKind::Binomial => Family::binomial(self.size.clone()),
            FamilyKind::Poisson => Family::poisson(Some(self.size.clone())),
        }
    }

    /// Sum of events (counts) or of weighted responses (Gaussian).
    pub fn total_response(&self) -> f64 {
        match self.family {
            FamilyKind::Gaussian => self.response.iter().zip(&self.size).map(|(y, w)| y * w).sum(),
            _ => self.response.iter().sum(),
        }
    }

    /// Pools `factor` consecutive age groups within each period. Counts and
    /// sizes are summed; Gaussian responses become weighted means.
    pub fn aggregate_ages(&self, factor: usize) -> Result<ApcDataset> {
        if factor == 0 || !self.grid.n_age.is_multiple_of(factor) {
            return Err(ApcError::Config(format!(
                "{} age groups cannot be pooled in blocks of {factor}",
                self.grid.n_age
            )));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let g = &self.grid;
        let age_start = g.age_midpoints[0] - 0.5 * g.age_width;
        let period_start = g.period_midpoints[0] - 0.5 * g.period_width;
        let grid = TemporalGrid::new(
            g.n_age / factor,
            g.n_period,
            g.ratio * factor,
            age_start,
            g.age_width * factor as f64,
            period_start,
            g.period_width,
        )?;
        let mut acc: HashMap<(usize, usize), (f64, f64)> = HashMap::new();
        let mut order: Vec<(usize, usize)> = Vec::new();
        for (i, cell) in self.cells.iter().enumerate() {
            let key = ((cell.a - 1) / factor + 1, cell.p);
            let entry = acc.entry(key).or_insert_with(|| {
                order.push(key);
                (0.0, 0.0)
            });
            match self.family {
                FamilyKind::Gaussian => entry.0 += self.response[i] * self.size[i],
                _ => entry.0 += self.response[i],
            }
            entry.1 += self.size[i];
        }
        order.sort_unstable();
        let mut cells = Vec::with_capacity(order.len());
        let mut response = Vec::with_capacity(order.len());
        let mut size = Vec::with_capacity(order.len());
        for key in order {
            let (r, s) = acc[&key];
            cells.push(grid.cell(key.0, key.1)?);
            response.push(if self.family == FamilyKind::Gaussian { r / s } else { r });
            size.push(s);
        }
        ApcDataset::new(grid, self.family, cells, response, size)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let d: ApcDataset = serde_json::from_str(text)?;
        d.validate()?;
        Ok(d)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(m_age: usize) -> ApcDataset {
        let grid = TemporalGrid::with_ratio(m_age, 4, 1).unwrap();
        let cells = grid.cells();
        let response: Vec<f64> = cells.iter().map(|c| (c.a * 3 + c.p) as f64).collect();
        let size = vec![100.0; cells.len()];
        ApcDataset::new(grid, FamilyKind::Binomial, cells, response, size).unwrap()
    }

    #[test]
    fn aggregation_preserves_totals() {
        let d = counts(10);
        let agg = d.aggregate_ages(5).unwrap();
        assert_eq!(agg.grid.n_age, 2);
        assert_eq!(agg.grid.ratio, 5);
        assert_eq!(agg.grid.n_cohort, 5 + 4);
        assert_eq!(agg.total_response(), d.total_response());
        assert_eq!(agg.size.iter().sum::<f64>(), d.size.iter().sum::<f64>());
        assert_eq!(agg.grid.age_midpoints, vec![2.5, 7.5]);
        assert_eq!(d.aggregate_ages(1).unwrap(), d);
        assert!(d.aggregate_ages(3).is_err());
    }

    #[test]
    fn gaussian_pooling_is_weighted_mean() {
        let grid = TemporalGrid::with_ratio(2, 3, 1).unwrap();
        let cells = grid.cells();
        let response = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let size = vec![1.0, 1.0, 1.0, 3.0, 3.0, 3.0];
        let d = ApcDataset::new(grid, FamilyKind::Gaussian, cells, response, size).unwrap();
        let agg = d.aggregate_ages(2).unwrap();
        // ages 1 and 2 at period 1: (1·1 + 4·3) / 4
        assert!((agg.response[0] - 13.0 / 4.0).abs() < 1e-15);
        assert_eq!(agg.size[0], 4.0);
        assert!((agg.total_response() - d.total_response()).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip_and_validation() {
        let d = counts(4);
        let back = ApcDataset::from_json(&d.to_json().unwrap()).unwrap();
        assert_eq!(back, d);
        let mut bad = d.clone();
        bad.response[0] = 1000.0;
        assert!(bad.validate().is_err());
        let mut bad = d;
        bad.cells[0].c = 99;
        assert!(bad.validate().is_err());
    }
}
