//! Response families with their canonical links.

use serde::{Deserialize, Serialize};

use crate::error::{ApcError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    Gaussian,
    Binomial,
    Poisson,
}

impl FamilyKind {
    pub fn link_name(self) -> &'static str {
        match self {
            FamilyKind::Gaussian => "identity",
            FamilyKind::Binomial => "logit",
            FamilyKind::Poisson => "log",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::Gaussian => "gaussian",
            FamilyKind::Binomial => "binomial",
            FamilyKind::Poisson => "poisson",
        }
    }
}

impl std::fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for FamilyKind {
    type Err = ApcError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(FamilyKind::Gaussian),
            "binomial" => Ok(FamilyKind::Binomial),
            "poisson" => Ok(FamilyKind::Poisson),
            other => Err(ApcError::Config(format!("unknown family '{other}'"))),
        }
    }
}

/// A family plus the per-row quantities it needs: binomial trials, Poisson
/// exposure (entering as a `log` offset) and Gaussian prior weights (cell
/// sizes when the response holds cell means).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Family {
    pub kind: FamilyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exposure: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

const PROB_EPS: f64 = 1e-10;

impl Family {
    pub fn gaussian() -> Self {
        Self { kind: FamilyKind::Gaussian, trials: None, exposure: None, weights: None }
    }

    pub fn gaussian_weighted(weights: Vec<f64>) -> Self {
        Self { kind: FamilyKind::Gaussian, trials: None, exposure: None, weights: Some(weights) }
    }

    pub fn binomial(trials: Vec<f64>) -> Self {
        Self { kind: FamilyKind::Binomial, trials: Some(trials), exposure: None, weights: None }
    }

    pub fn poisson(exposure: Option<Vec<f64>>) -> Self {
        Self { kind: FamilyKind::Poisson, trials: None, exposure, weights: None }
    }

    fn at(v: &Option<Vec<f64>>, i: usize) -> f64 {
        v.as_ref().map_or(1.0, |v| v[i])
    }

    pub fn trials_at(&self, i: usize) -> f64 {
        Self::at(&self.trials, i)
    }

    pub fn prior_weight(&self, i: usize) -> f64 {
        Self::at(&self.weights, i)
    }

    /// Offset added to the linear predictor of row `i`.
    pub fn offset(&self, i: usize) -> f64 {
        match (self.kind, &self.exposure) {
            (FamilyKind::Poisson, Some(e)) => e[i].ln(),
            _ => 0.0,
        }
    }

    /// Checks the response against the family's support.
    pub fn validate(&self, y: &[f64]) -> Result<()> {
        let n = y.len();
        for (name, v) in [("trials", &self.trials), ("exposure", &self.exposure), ("weights", &self.weights)] {
            if let Some(v) = v {
                if v.len() != n {
                    return Err(ApcError::Dimension(format!("{name} has {} entries, response has {n}", v.len())));
                }
                if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                    return Err(ApcError::Config(format!("{name} must be positive")));
                }
            }
        }
        match self.kind {
            FamilyKind::Gaussian => {
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(ApcError::Config("gaussian response must be finite".into()));
                }
            }
            FamilyKind::Binomial => {
                if self.trials.is_none() {
                    return Err(ApcError::Config("binomial family needs trials".into()));
                }
                for (i, &v) in y.iter().enumerate() {
                    if !(v >= 0.0 && v <= self.trials_at(i)) {
                        return Err(ApcError::Config(format!("binomial count {v} outside [0, trials] at row {i}")));
                    }
                }
            }
            FamilyKind::Poisson => {
                if y.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(ApcError::Config("poisson response must be non-negative".into()));
                }
            }
        }
        Ok(())
    }

    /// Expected response for row `i` given the full linear predictor
    /// (offset included).
    pub fn mean(&self, i: usize, eta: f64) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => eta,
            FamilyKind::Binomial => self.trials_at(i) * expit(eta),
            FamilyKind::Poisson => eta.exp(),
        }
    }

    /// Starting linear predictor (offset included), moved away from the
    /// boundary of the response space.
    pub fn initial_eta(&self, i: usize, y: f64) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => y,
            FamilyKind::Binomial => {
                let n = self.trials_at(i);
                logit((y + 0.5) / (n + 1.0))
            }
            FamilyKind::Poisson => (y + 0.5).ln(),
        }
    }

    /// Working weight and working response (offset removed) at `eta`.
    pub fn working(&self, i: usize, y: f64, eta: f64) -> (f64, f64) {
        let offset = self.offset(i);
        match self.kind {
            FamilyKind::Gaussian => (self.prior_weight(i), y),
            FamilyKind::Binomial => {
                let n = self.trials_at(i);
                let p = expit(eta).clamp(PROB_EPS, 1.0 - PROB_EPS);
                let v = p * (1.0 - p);
                (n * v, eta - offset + (y / n - p) / v)
            }
            FamilyKind::Poisson => {
                let mu = eta.exp().max(PROB_EPS);
                (mu, eta - offset + (y - mu) / mu)
            }
        }
    }

    /// Deviance contribution of one row.
    pub fn unit_deviance(&self, i: usize, y: f64, mu: f64) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => self.prior_weight(i) * (y - mu) * (y - mu),
            FamilyKind::Binomial => {
                let n = self.trials_at(i);
                2.0 * (xlogy(y, y / mu) + xlogy(n - y, (n - y) / (n - mu)))
            }
            FamilyKind::Poisson => 2.0 * (xlogy(y, y / mu) - (y - mu)),
        }
    }

    pub fn deviance(&self, y: &[f64], mu: &[f64]) -> f64 {
        y.iter().zip(mu).enumerate().map(|(i, (&yi, &mi))| self.unit_deviance(i, yi, mi)).sum()
    }

    /// Derivative of the deviance with respect to the linear predictor of row `i`.
    pub fn deviance_gradient(&self, i: usize, y: f64, eta: f64) -> f64 {
        let mu = self.mean(i, eta);
        match self.kind {
            FamilyKind::Gaussian => -2.0 * self.prior_weight(i) * (y - mu),
            FamilyKind::Binomial | FamilyKind::Poisson => -2.0 * (y - mu),
        }
    }
}

/// `a · ln(b)` with the convention `0 · ln(·) = 0`.
fn xlogy(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a * b.ln()
    }
}

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}
