//! Simulation studies comparing factor, regression-spline and
//! penalized-spline APC models on equally and unequally aggregated data.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::dataset::ApcDataset;
use crate::design::{build_design_for_cells, ApcDesign, DesignSpec, Dimension, KnotCounts, ModelKind, SlopeDrop};
use crate::effects::{
    aggregate_true_age, aggregate_true_cohort, bias_mse, design_effects, detrend_values, periodicity_amplitude,
    write_effects_csv, write_summary_csv, EffectTable, ReplicateSummary,
};
use crate::error::{ApcError, Result};
use crate::family::{expit, FamilyKind};
use crate::grid::TemporalGrid;
use crate::parallel::map_indexed;
use crate::pirls::PenalizedProblem;
use crate::smoothing::{fit_prepared, GcvControl};

/// `linear·x + quadratic·x²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quadratic {
    pub linear: f64,
    pub quadratic: f64,
}

impl Quadratic {
    pub fn eval(&self, x: f64) -> f64 {
        self.linear * x + self.quadratic * x * x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueFunctions {
    pub age: Quadratic,
    pub period: Quadratic,
    pub cohort: Quadratic,
    pub offset: f64,
    pub scale: f64,
    pub include_cohort: bool,
}

impl TrueFunctions {
    /// Default curves with the offset and scale used for each family.
    pub fn for_family(kind: FamilyKind) -> Self {
        let (offset, scale) = match kind {
            FamilyKind::Gaussian => (0.0, 1.0),
            FamilyKind::Binomial => (0.4, 50.0),
            FamilyKind::Poisson => (-1.5, 50.0),
        };
        Self {
            age: Quadratic { linear: 0.3, quadratic: -0.01 },
            period: Quadratic { linear: -0.04, quadratic: 0.02 },
            cohort: Quadratic { linear: 0.35, quadratic: -0.0015 },
            offset,
            scale,
            include_cohort: true,
        }
    }

    pub fn without_cohort(mut self) -> Self {
        self.include_cohort = false;
        self
    }

    fn cohort_value(&self, c: f64) -> f64 {
        if self.include_cohort {
            self.cohort.eval(c)
        } else {
            0.0
        }
    }

    /// Linear predictor (exposure offset excluded).
    pub fn eta(&self, a: f64, p: f64, c: f64) -> f64 {
        self.offset + (self.age.eval(a) + self.period.eval(p) + self.cohort_value(c)) / self.scale
    }

    /// True marginal effects on the linear-predictor scale at single-year
    /// resolution, aggregated to `ratio` and detrended against the
    /// aggregated grid's midpoints.
    pub fn effects(&self, fine: &TemporalGrid, coarse: &TemporalGrid, ratio: usize) -> Result<Vec<EffectTable>> {
        let centred = |v: Vec<f64>| -> Vec<f64> {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.into_iter().map(|x| (x - m) / self.scale).collect()
        };
        let age = centred(fine.age_midpoints.iter().map(|&a| self.age.eval(a)).collect());
        let period = centred(fine.period_midpoints.iter().map(|&p| self.period.eval(p)).collect());
        let cohort = centred(fine.cohort_midpoints.iter().map(|&c| self.cohort_value(c)).collect());
        let per_dim = [
            (Dimension::Age, aggregate_true_age(&age, ratio)?, &coarse.age_midpoints),
            (Dimension::Period, period, &coarse.period_midpoints),
            (Dimension::Cohort, aggregate_true_cohort(&cohort, ratio)?, &coarse.cohort_midpoints),
        ];
        per_dim
            .into_iter()
            .map(|(d, effect, x)| {
                if effect.len() != x.len() {
                    return Err(ApcError::Dimension(format!("{d} truth has {} points, grid {}", effect.len(), x.len())));
                }
                let curvature = detrend_values(x, &effect)?;
                Ok(EffectTable { dimension: d, x: x.clone(), effect, curvature })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    Equal,
    Unequal,
    UnequalDense,
    UnequalPeriodic,
}

impl Profile {
    pub const ALL: [Profile; 4] = [Profile::Equal, Profile::Unequal, Profile::UnequalDense, Profile::UnequalPeriodic];

    pub fn name(self) -> &'static str {
        match self {
            Profile::Equal => "equal",
            Profile::Unequal => "unequal",
            Profile::UnequalDense => "unequal-dense",
            Profile::UnequalPeriodic => "unequal-periodic",
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Profile {
    type Err = ApcError;

    fn from_str(s: &str) -> Result<Self> {
        Profile::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| ApcError::Config(format!("unknown profile '{s}' (expected equal, unequal, unequal-dense or unequal-periodic)")))
    }
}

/// How curvature knots are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule")]
pub enum KnotRule {
    /// A quarter of the distinct values (at least 3), unless overridden.
    Default { counts: KnotCounts },
    /// One fewer than the number of distinct values.
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub profile: Option<Profile>,
    pub family: FamilyKind,
    pub n_age: usize,
    pub n_period: usize,
    /// Draws per cell (binomial trials, Poisson exposure, Gaussian sample size).
    pub cell_size: f64,
    pub replicates: usize,
    /// Number of single-year ages pooled into each age group.
    pub ratio: usize,
    pub seed: u64,
    pub models: Vec<ModelKind>,
    pub knots: KnotRule,
    pub augment_periodic: bool,
    pub drop: SlopeDrop,
    /// Period (in period steps) whose amplitude is reported for curvatures.
    pub amplitude_period: usize,
    pub truths: TrueFunctions,
}

impl SimConfig {
    pub fn profile(profile: Profile, family: FamilyKind, seed: u64) -> Self {
        let base = SimConfig {
            profile: Some(profile),
            family,
            n_age: 60,
            n_period: 20,
            cell_size: 150.0,
            replicates: 100,
            ratio: 1,
            seed,
            models: vec![ModelKind::Fa, ModelKind::Rss, ModelKind::Pss],
            knots: KnotRule::Default { counts: KnotCounts::default() },
            augment_periodic: false,
            drop: SlopeDrop::Cohort,
            amplitude_period: 5,
            truths: TrueFunctions::for_family(family),
        };
        match profile {
            Profile::Equal => base,
            Profile::Unequal => SimConfig { ratio: 5, ..base },
            Profile::UnequalDense => SimConfig {
                ratio: 5,
                models: vec![ModelKind::Rss, ModelKind::Pss],
                knots: KnotRule::Dense,
                ..base
            },
            Profile::UnequalPeriodic => SimConfig {
                ratio: 5,
                models: vec![ModelKind::Rss, ModelKind::Pss],
                augment_periodic: true,
                ..base
            },
        }
    }

    pub fn with_replicates(mut self, replicates: usize) -> Self {
        self.replicates = replicates;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_age == 0 || self.n_period == 0 || self.ratio == 0 {
            return Err(ApcError::Config("grid sizes and ratio must be positive".into()));
        }
        if !self.n_age.is_multiple_of(self.ratio) {
            return Err(ApcError::Config(format!("ratio {} does not divide {} ages", self.ratio, self.n_age)));
        }
        if self.replicates == 0 {
            return Err(ApcError::Config("at least one replicate is needed".into()));
        }
        if !(self.cell_size >= 1.0 && self.cell_size.fract() == 0.0) {
            return Err(ApcError::Config("cell size must be a positive whole number".into()));
        }
        if self.models.is_empty() {
            return Err(ApcError::Config("no models to fit".into()));
        }
        if self.augment_periodic && self.ratio < 2 {
            return Err(ApcError::Config("periodic augmentation needs ratio ≥ 2".into()));
        }
        if self.augment_periodic && self.models.contains(&ModelKind::Fa) {
            return Err(ApcError::Config("periodic augmentation cannot be used with the factor model".into()));
        }
        Ok(())
    }

    /// Single-year grid the data are generated on.
    pub fn fine_grid(&self) -> Result<TemporalGrid> {
        TemporalGrid::with_ratio(self.n_age, self.n_period, 1)
    }

    /// Grid after pooling `ratio` ages.
    pub fn coarse_grid(&self) -> Result<TemporalGrid> {
        TemporalGrid::new(self.n_age / self.ratio, self.n_period, self.ratio, 0.0, self.ratio as f64, 0.0, 1.0)
    }

    fn design_spec(&self, kind: ModelKind, grid: &TemporalGrid) -> DesignSpec {
        let knots = match self.knots {
            KnotRule::Default { counts } => counts,
            KnotRule::Dense => KnotCounts::new(grid.n_age - 1, grid.n_period - 1, grid.n_cohort - 1),
        };
        DesignSpec { kind, drop: self.drop, knots, augment_periodic: self.augment_periodic }
    }
}

/// The random generator for replicate `s`.
pub fn replicate_rng(seed: u64, s: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s as u64);
    rng
}

/// Draws one single-year replicate.
pub fn generate_replicate(cfg: &SimConfig, s: usize) -> Result<ApcDataset> {
    cfg.validate()?;
    let grid = cfg.fine_grid()?;
    let mut rng = replicate_rng(cfg.seed, s);
    let cells = grid.cells();
    let n_draws = cfg.cell_size as u64;
    let mut response = Vec::with_capacity(cells.len());
    for cell in &cells {
        let eta = cfg.truths.eta(
            grid.age_midpoints[cell.a - 1],
            grid.period_midpoints[cell.p - 1],
            grid.cohort_midpoints[cell.c - 1],
        );
        let y = match cfg.family {
            FamilyKind::Gaussian => {
                let normal = Normal::new(eta, 1.0).map_err(|e| ApcError::Numerical(e.to_string()))?;
                let total: f64 = (0..n_draws).map(|_| normal.sample(&mut rng)).sum();
                total / cfg.cell_size
            }
            FamilyKind::Binomial => {
                let b = Binomial::new(n_draws, expit(eta)).map_err(|e| ApcError::Numerical(e.to_string()))?;
                b.sample(&mut rng) as f64
            }
            FamilyKind::Poisson => {
                let p = Poisson::new(cfg.cell_size * eta.exp()).map_err(|e| ApcError::Numerical(e.to_string()))?;
                p.sample(&mut rng)
            }
        };
        response.push(y);
    }
    let size = vec![cfg.cell_size; cells.len()];
    ApcDataset::new(grid, cfg.family, cells, response, size)
}

/// Individual Gaussian draws for one replicate, in cell order; their cell
/// means equal the response of [`generate_replicate`].
pub fn gaussian_draws(cfg: &SimConfig, s: usize) -> Result<Vec<Vec<f64>>> {
    if cfg.family != FamilyKind::Gaussian {
        return Err(ApcError::Config("individual draws exist only for the gaussian family".into()));
    }
    let grid = cfg.fine_grid()?;
    let mut rng = replicate_rng(cfg.seed, s);
    grid.cells()
        .iter()
        .map(|cell| {
            let eta = cfg.truths.eta(
                grid.age_midpoints[cell.a - 1],
                grid.period_midpoints[cell.p - 1],
                grid.cohort_midpoints[cell.c - 1],
            );
            let normal = Normal::new(eta, 1.0).map_err(|e| ApcError::Numerical(e.to_string()))?;
            Ok((0..cfg.cell_size as usize).map(|_| normal.sample(&mut rng)).collect())
        })
        .collect()
}

pub fn aggregate_replicate(data: &ApcDataset, ratio: usize) -> Result<ApcDataset> {
    data.aggregate_ages(ratio)
}

/// Per-replicate result for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelEstimate {
    pub effects: Vec<EffectTable>,
    pub lambdas: Vec<f64>,
    pub edf: f64,
    pub iterations: usize,
    pub aliased: usize,
    pub period_amplitude: f64,
    pub cohort_amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FitOutcome {
    Converged(ModelEstimate),
    Failed { reason: String, iterations: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRecord {
    pub model: String,
    pub replicate: usize,
    pub converged: bool,
    pub iterations: usize,
    pub edf: f64,
    pub aliased: usize,
    pub lambda_age: f64,
    pub lambda_period: f64,
    pub lambda_cohort: f64,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AmplitudeRecord {
    pub model: String,
    pub replicate: usize,
    pub period: f64,
    pub cohort: f64,
}

#[derive(Debug, Clone)]
pub struct ModelReport {
    pub kind: ModelKind,
    pub converged: usize,
    pub failed: usize,
    /// Replicate means of the estimated effects and curvatures.
    pub mean_effects: Vec<EffectTable>,
    /// Curvature bias and MSE per dimension over converged replicates.
    pub curvature: Vec<ReplicateSummary>,
    pub amplitudes: Vec<AmplitudeRecord>,
}

impl ModelReport {
    pub fn summary(&self, d: Dimension) -> &ReplicateSummary {
        &self.curvature[d.index()]
    }

    pub fn mean_curvature(&self, d: Dimension) -> &[f64] {
        &self.mean_effects[d.index()].curvature
    }

    pub fn period_amplitudes(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.period).collect()
    }

    pub fn cohort_amplitudes(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.cohort).collect()
    }
}

#[derive(Debug, Clone)]
pub struct StudyReport {
    pub config: SimConfig,
    pub truth: Vec<EffectTable>,
    pub models: Vec<ModelReport>,
    pub convergence: Vec<ConvergenceRecord>,
}

impl StudyReport {
    pub fn model(&self, kind: ModelKind) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.kind == kind)
    }

    /// Writes the report's CSV tables into `dir` (created if missing).
    pub fn write_csvs(&self, dir: &Path) -> Result<Vec<String>> {
        std::fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        let mut put = |name: String, bytes: Vec<u8>| -> Result<()> {
            std::fs::write(dir.join(&name), bytes)?;
            files.push(name);
            Ok(())
        };
        let mut buf = Vec::new();
        write_effects_csv(&mut buf, &self.truth)?;
        put("truth.csv".into(), buf)?;
        for m in &self.models {
            let label = m.kind.label().to_ascii_lowercase();
            let mut buf = Vec::new();
            write_effects_csv(&mut buf, &m.mean_effects)?;
            put(format!("{label}_effects.csv"), buf)?;
            let rows: Vec<(Dimension, &[f64], &ReplicateSummary)> = Dimension::ALL
                .into_iter()
                .map(|d| (d, self.truth[d.index()].x.as_slice(), m.summary(d)))
                .collect();
            let mut buf = Vec::new();
            write_summary_csv(&mut buf, &rows)?;
            put(format!("{label}_curvature_summary.csv"), buf)?;
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        for m in &self.models {
            for a in &m.amplitudes {
                w.serialize(a)?;
            }
        }
        put("amplitudes.csv".into(), w.into_inner().map_err(|e| ApcError::Io(e.into_error()))?)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.convergence {
            w.serialize(r)?;
        }
        put("convergence.csv".into(), w.into_inner().map_err(|e| ApcError::Io(e.into_error()))?)?;
        Ok(files)
    }
}

struct PreparedModel {
    kind: ModelKind,
    design: Arc<ApcDesign>,
    problem: PenalizedProblem,
}

fn prepare_models(cfg: &SimConfig, grid: &TemporalGrid, control: &GcvControl) -> Result<Vec<PreparedModel>> {
    let cells = grid.cells();
    cfg.models
        .iter()
        .map(|&kind| {
            let design = Arc::new(build_design_for_cells(grid, &cells, cfg.design_spec(kind, grid))?);
            let problem = PenalizedProblem::from_design(&design, control.fit.rank_tol)?;
            Ok(PreparedModel { kind, design, problem })
        })
        .collect()
}

fn fit_one(model: &PreparedModel, data: &ApcDataset, cfg: &SimConfig, control: &GcvControl) -> FitOutcome {
    let family = data.family();
    match fit_prepared(&model.problem, &model.design, &data.response, &family, control) {
        Ok(fit) if fit.converged => {
            let effects = match design_effects(&fit.design, &fit.beta) {
                Ok(e) => e,
                Err(e) => return FitOutcome::Failed { reason: e.to_string(), iterations: fit.iterations },
            };
            let amp = |d: Dimension| periodicity_amplitude(&effects[d.index()].curvature, cfg.amplitude_period).unwrap_or(f64::NAN);
            FitOutcome::Converged(ModelEstimate {
                period_amplitude: amp(Dimension::Period),
                cohort_amplitude: amp(Dimension::Cohort),
                effects,
                lambdas: fit.lambdas.clone(),
                edf: fit.edf,
                iterations: fit.iterations,
                aliased: fit.aliased.len(),
            })
        }
        Ok(fit) => FitOutcome::Failed { reason: "PIRLS did not converge".into(), iterations: fit.iterations },
        Err(e) => FitOutcome::Failed { reason: e.to_string(), iterations: 0 },
    }
}

/// Generates, aggregates and fits one replicate (1-based) with every model.
pub fn run_replicate(cfg: &SimConfig, s: usize, control: &GcvControl) -> Result<Vec<FitOutcome>> {
    let grid = cfg.coarse_grid()?;
    let models = prepare_models(cfg, &grid, control)?;
    let data = aggregate_replicate(&generate_replicate(cfg, s)?, cfg.ratio)?;
    Ok(models.iter().map(|m| fit_one(m, &data, cfg, control)).collect())
}

/// Runs the full study. `workers` bounds replicate-level parallelism; the
/// report does not depend on it.
pub fn run_study(cfg: &SimConfig, workers: Option<usize>) -> Result<StudyReport> {
    run_study_with(cfg, workers, &GcvControl::default())
}

pub fn run_study_with(cfg: &SimConfig, workers: Option<usize>, control: &GcvControl) -> Result<StudyReport> {
    cfg.validate()?;
    let fine = cfg.fine_grid()?;
    let coarse = cfg.coarse_grid()?;
    let truth = cfg.truths.effects(&fine, &coarse, cfg.ratio)?;
    let models = prepare_models(cfg, &coarse, control)?;

    let outcomes: Vec<Result<Vec<FitOutcome>>> = map_indexed(cfg.replicates, workers, |i| {
        let s = i + 1;
        let data = aggregate_replicate(&generate_replicate(cfg, s)?, cfg.ratio)?;
        Ok(models.iter().map(|m| fit_one(m, &data, cfg, control)).collect())
    });
    let outcomes: Vec<Vec<FitOutcome>> = outcomes.into_iter().collect::<Result<_>>()?;

    let mut convergence = Vec::new();
    let mut reports = Vec::new();
    for (k, model) in models.iter().enumerate() {
        let label = model.kind.label().to_string();
        let mut estimates: Vec<&ModelEstimate> = Vec::new();
        let mut amplitudes = Vec::new();
        for (i, per_model) in outcomes.iter().enumerate() {
            let s = i + 1;
            match &per_model[k] {
                FitOutcome::Converged(est) => {
                    let lam = |d: usize| est.lambdas.get(d).copied().unwrap_or(0.0);
                    convergence.push(ConvergenceRecord {
                        model: label.clone(),
                        replicate: s,
                        converged: true,
                        iterations: est.iterations,
                        edf: est.edf,
                        aliased: est.aliased,
                        lambda_age: lam(0),
                        lambda_period: lam(1),
                        lambda_cohort: lam(2),
                        note: String::new(),
                    });
                    amplitudes.push(AmplitudeRecord {
                        model: label.clone(),
                        replicate: s,
                        period: est.period_amplitude,
                        cohort: est.cohort_amplitude,
                    });
                    estimates.push(est);
                }
                FitOutcome::Failed { reason, iterations } => {
                    log::warn!("{label} replicate {s} excluded: {reason}");
                    convergence.push(ConvergenceRecord {
                        model: label.clone(),
                        replicate: s,
                        converged: false,
                        iterations: *iterations,
                        edf: f64::NAN,
                        aliased: 0,
                        lambda_age: f64::NAN,
                        lambda_period: f64::NAN,
                        lambda_cohort: f64::NAN,
                        note: reason.clone(),
                    });
                }
            }
        }
        if estimates.is_empty() {
            return Err(ApcError::Numerical(format!("no {label} replicate converged")));
        }
        let mut mean_effects = Vec::with_capacity(3);
        let mut curvature = Vec::with_capacity(3);
        for d in Dimension::ALL {
            let idx = d.index();
            let curves: Vec<Vec<f64>> = estimates.iter().map(|e| e.effects[idx].curvature.clone()).collect();
            curvature.push(bias_mse(&curves, &truth[idx].curvature)?);
            let n = estimates.len() as f64;
            let len = truth[idx].x.len();
            let mut effect = vec![0.0; len];
            let mut curv = vec![0.0; len];
            for e in &estimates {
                for j in 0..len {
                    effect[j] += e.effects[idx].effect[j] / n;
                    curv[j] += e.effects[idx].curvature[j] / n;
                }
            }
            mean_effects.push(EffectTable { dimension: d, x: truth[idx].x.clone(), effect, curvature: curv });
        }
        reports.push(ModelReport {
            kind: model.kind,
            converged: estimates.len(),
            failed: cfg.replicates - estimates.len(),
            mean_effects,
            curvature,
            amplitudes,
        });
    }
    Ok(StudyReport { config: cfg.clone(), truth, models: reports, convergence })
}

/// Fraction of the expected response relative to cell size, averaged over
/// the single-year grid.
pub fn expected_response_share(cfg: &SimConfig) -> Result<f64> {
    let grid = cfg.fine_grid()?;
    let cells = grid.cells();
    let total: f64 = cells
        .iter()
        .map(|c| {
            let eta = cfg.truths.eta(grid.age_midpoints[c.a - 1], grid.period_midpoints[c.p - 1], grid.cohort_midpoints[c.c - 1]);
            match cfg.family {
                FamilyKind::Binomial => expit(eta),
                FamilyKind::Poisson => eta.exp(),
                FamilyKind::Gaussian => eta,
            }
        })
        .sum();
    Ok(total / cells.len() as f64)
}
