use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use apc_core::data_io::{parse_rate_csv, RateTable, SyntheticMortality};
use apc_core::dataset::ApcDataset;
use apc_core::design::{build_design_for_cells, DesignSpec, Dimension, KnotCounts, ModelKind, SlopeDrop};
use apc_core::effects::{design_curves, design_effects, write_curves_csv, write_effects_csv, CurvatureCurve, EffectTable};
use apc_core::family::FamilyKind;
use apc_core::grid::{CellIndex, TemporalGrid};
use apc_core::sim::{run_study, SimConfig, StudyReport};
use apc_core::smoothing::{fit_apc_with_lambdas, GcvControl};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::manifest::RunManifest;

pub const MODEL_FILE: &str = "model.json";

pub fn simulate(cfg: &SimConfig, workers: Option<usize>, out: &Path) -> Result<()> {
    cfg.validate()?;
    let mut manifest = RunManifest::start("simulate", serde_json::to_value(cfg)?);
    manifest.seed = Some(cfg.seed);
    manifest.workers = workers;
    let report = run_study(cfg, workers)?;
    let mut files = report.write_csvs(out)?;
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&StudySummary::of(&report))?)?;
    files.push("summary.json".into());
    for m in &report.models {
        if m.failed > 0 {
            log::warn!("{}: {} of {} replicates failed; see convergence.csv", m.kind, m.failed, cfg.replicates);
        }
    }
    manifest.finish(out, &files)?;
    Ok(())
}

#[derive(Serialize)]
struct ModelSummary {
    model: String,
    converged: usize,
    failed: usize,
    max_abs_curvature_bias: [f64; 3],
    median_curvature_mse: [f64; 3],
    median_period_amplitude: f64,
    median_cohort_amplitude: f64,
}

#[derive(Serialize)]
struct StudySummary {
    replicates: usize,
    models: Vec<ModelSummary>,
}

impl StudySummary {
    fn of(report: &StudyReport) -> Self {
        let models = report
            .models
            .iter()
            .map(|m| {
                let per_dim = |f: &dyn Fn(Dimension) -> f64| Dimension::ALL.map(f);
                ModelSummary {
                    model: m.kind.label().to_string(),
                    converged: m.converged,
                    failed: m.failed,
                    max_abs_curvature_bias: per_dim(&|d| m.summary(d).bias.iter().fold(0.0, |a, b| a.max(b.abs()))),
                    median_curvature_mse: per_dim(&|d| median(&m.summary(d).mse)),
                    median_period_amplitude: median(&m.period_amplitudes()),
                    median_cohort_amplitude: median(&m.cohort_amplitudes()),
                }
            })
            .collect();
        Self { replicates: report.config.replicates, models }
    }
}

pub fn median(v: &[f64]) -> f64 {
    let mut s: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    if s.is_empty() {
        return f64::NAN;
    }
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub kind: ModelKind,
    pub drop: SlopeDrop,
    pub knots: KnotCounts,
    #[serde(default)]
    pub augment_periodic: bool,
    /// Fixed smoothing parameters, one per curvature block; `None` selects by GCV.
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
    /// Round CSV counts to integers before fitting.
    pub round: bool,
    #[serde(default)]
    pub age_range: Option<[f64; 2]>,
    #[serde(default)]
    pub period_range: Option<[f64; 2]>,
}

/// Everything needed to rebuild a fitted model's design and coefficients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub version: String,
    pub spec: DesignSpec,
    pub family: FamilyKind,
    pub grid: TemporalGrid,
    pub cells: Vec<CellIndex>,
    pub beta: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Serialize)]
struct FitReport {
    kind: ModelKind,
    family: FamilyKind,
    cells: usize,
    n_age: usize,
    n_period: usize,
    n_cohort: usize,
    ratio: usize,
    deviance: f64,
    penalized_deviance: f64,
    edf: f64,
    lambdas: Vec<f64>,
    gcv: Option<f64>,
    converged: bool,
    iterations: usize,
    aliased_columns: Vec<usize>,
    warnings: Vec<String>,
}

pub fn load_dataset(path: &Path, cfg: &FitConfig) -> Result<ApcDataset> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        if cfg.age_range.is_some() || cfg.period_range.is_some() {
            bail!("age/period ranges apply to CSV rate tables only");
        }
        return Ok(ApcDataset::load(path)?);
    }
    let mut table: RateTable = parse_rate_csv(path)?;
    if cfg.age_range.is_some() || cfg.period_range.is_some() {
        let age = cfg.age_range.unwrap_or([f64::NEG_INFINITY, f64::INFINITY]);
        let period = cfg.period_range.unwrap_or([f64::NEG_INFINITY, f64::INFINITY]);
        table = table.subset((age[0], age[1]), (period[0], period[1]))?;
    }
    if cfg.round {
        table = table.round_counts();
    }
    Ok(table.to_model_dataset()?)
}

pub fn fit(data_path: &Path, cfg: &FitConfig, out: &Path) -> Result<()> {
    let mut manifest = RunManifest::start("fit", serde_json::to_value(cfg)?);
    manifest.add_input(data_path)?;
    let data = load_dataset(data_path, cfg)?;
    let spec = DesignSpec { kind: cfg.kind, drop: cfg.drop, knots: cfg.knots, augment_periodic: cfg.augment_periodic };
    let mut warnings = Vec::new();
    if cfg.kind == ModelKind::Fa && data.grid.ratio > 1 {
        warnings.push(format!(
            "factor model on unequal intervals (ratio {}): period and cohort curvatures are not identifiable and will show {}-periodic artefacts",
            data.grid.ratio, data.grid.ratio
        ));
    }
    let design = Arc::new(build_design_for_cells(&data.grid, &data.cells, spec)?);
    let model = fit_apc_with_lambdas(&design, &data.response, &data.family(), cfg.lambdas.as_deref(), &GcvControl::default())?;
    if !model.converged {
        warnings.push(format!("PIRLS did not converge after {} iterations", model.iterations));
    }
    if model.has_aliasing() {
        warnings.push(format!("{} aliased columns were fixed at zero", model.aliased.len()));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let effects = design_effects(&design, &model.beta)?;
    let curves = design_curves(&design, &model.beta);
    let report = FitReport {
        kind: cfg.kind,
        family: data.family,
        cells: data.len(),
        n_age: data.grid.n_age,
        n_period: data.grid.n_period,
        n_cohort: data.grid.n_cohort,
        ratio: data.grid.ratio,
        deviance: model.deviance,
        penalized_deviance: model.penalized_deviance,
        edf: model.edf,
        lambdas: model.lambdas.clone(),
        gcv: model.gcv,
        converged: model.converged,
        iterations: model.iterations,
        aliased_columns: model.aliased.clone(),
        warnings,
    };
    let artifact = ModelArtifact {
        version: env!("CARGO_PKG_VERSION").to_string(),
        spec,
        family: data.family,
        grid: data.grid.clone(),
        cells: data.cells.clone(),
        beta: model.beta.iter().copied().collect(),
        lambdas: model.lambdas.clone(),
        converged: model.converged,
    };
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut files = write_tables(out, &effects, &curves)?;
    std::fs::write(out.join("fit.json"), serde_json::to_string_pretty(&report)?)?;
    std::fs::write(out.join(MODEL_FILE), serde_json::to_string(&artifact)?)?;
    files.extend(["fit.json".to_string(), MODEL_FILE.to_string()]);
    manifest.finish(out, &files)?;
    Ok(())
}

fn write_tables(out: &Path, effects: &[EffectTable], curves: &[CurvatureCurve]) -> Result<Vec<String>> {
    let mut buf = Vec::new();
    write_effects_csv(&mut buf, effects)?;
    std::fs::write(out.join("effects.csv"), buf)?;
    let mut buf = Vec::new();
    write_curves_csv(&mut buf, curves)?;
    std::fs::write(out.join("curvatures.csv"), buf)?;
    Ok(vec!["effects.csv".into(), "curvatures.csv".into()])
}

pub fn effects(model_path: &Path, out: &Path) -> Result<()> {
    let mut manifest = RunManifest::start("effects", serde_json::json!({ "model": model_path.display().to_string() }));
    manifest.add_input(model_path)?;
    let text = std::fs::read_to_string(model_path).with_context(|| format!("reading {}", model_path.display()))?;
    let artifact: ModelArtifact = serde_json::from_str(&text).context("not a fitted-model artifact")?;
    let design = build_design_for_cells(&artifact.grid, &artifact.cells, artifact.spec)?;
    if artifact.beta.len() != design.ncols() {
        bail!("artifact has {} coefficients but its design has {} columns", artifact.beta.len(), design.ncols());
    }
    let beta = DVector::from_vec(artifact.beta);
    let effects = design_effects(&design, &beta)?;
    let curves = design_curves(&design, &beta);
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let files = write_tables(out, &effects, &curves)?;
    manifest.finish(out, &files)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateConfig {
    pub age: usize,
    pub period: usize,
    pub round: bool,
}

pub const AGGREGATED_FILE: &str = "table.csv";

pub fn aggregate(input: &Path, cfg: &AggregateConfig, out: &Path) -> Result<PathBuf> {
    let mut manifest = RunManifest::start("aggregate", serde_json::to_value(cfg)?);
    manifest.add_input(input)?;
    let table = parse_rate_csv(input)?;
    let mut agg = table.aggregate(cfg.age, cfg.period)?;
    if cfg.round {
        agg = agg.round_counts();
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join(AGGREGATED_FILE);
    agg.save_csv(&path)?;
    manifest.finish(out, &[AGGREGATED_FILE.to_string()])?;
    Ok(path)
}

pub fn synthesize(cfg: &SyntheticMortality, out: &Path) -> Result<PathBuf> {
    let mut manifest = RunManifest::start("synthesize", serde_json::to_value(cfg)?);
    manifest.seed = Some(cfg.seed);
    let table = cfg.generate()?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join(AGGREGATED_FILE);
    table.save_csv(&path)?;
    manifest.finish(out, &[AGGREGATED_FILE.to_string()])?;
    Ok(path)
}

/// Parses `10,10,20` (or `auto` for the default quarter-of-levels rule;
/// individual entries may also be `auto`).
pub fn parse_knots(s: &str) -> std::result::Result<KnotCounts, String> {
    if s.trim().eq_ignore_ascii_case("auto") {
        return Ok(KnotCounts::default());
    }
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated counts, got '{s}'"));
    }
    let mut counts = [None; 3];
    for (slot, p) in counts.iter_mut().zip(&parts) {
        if p.eq_ignore_ascii_case("auto") {
            continue;
        }
        let k: usize = p.parse().map_err(|_| format!("'{p}' is not a knot count"))?;
        if k < 3 {
            return Err(format!("knot counts must be at least 3, got {k}"));
        }
        *slot = Some(k);
    }
    Ok(KnotCounts { age: counts[0], period: counts[1], cohort: counts[2] })
}

pub fn parse_range(s: &str) -> std::result::Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(format!("expected 'start,end', got '{s}'"));
    }
    let lo: f64 = parts[0].parse().map_err(|_| format!("bad range start '{}'", parts[0]))?;
    let hi: f64 = parts[1].parse().map_err(|_| format!("bad range end '{}'", parts[1]))?;
    if lo >= hi {
        return Err(format!("empty range {lo}..{hi}"));
    }
    Ok([lo, hi])
}
