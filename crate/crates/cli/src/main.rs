//! `apc`: simulation studies, model fitting and data preparation for
//! penalized-spline age-period-cohort models.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numerical
//! failure (nothing written).

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use apc_core::data_io::SyntheticMortality;
use apc_core::design::{KnotCounts, ModelKind, SlopeDrop};
use apc_core::family::FamilyKind;
use apc_core::sim::{Profile, SimConfig};
use apc_core::ApcError;
use clap::{Args, Parser, Subcommand};

use commands::{AggregateConfig, FitConfig};

#[derive(Parser)]
#[command(name = "apc", version, about = "Age-period-cohort models with penalized smoothing splines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Output directory; relative paths are placed under $APC_OUTPUT_ROOT when set.
    #[arg(long)]
    out: PathBuf,
    /// JSON file whose keys override the flags (a run manifest also works).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = config::OUTPUT_ROOT_ENV, hide_env_values = true)]
    output_root: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation study and write bias/MSE summaries.
    Simulate {
        /// equal, unequal, unequal-dense or unequal-periodic.
        #[arg(long)]
        profile: Profile,
        #[arg(long, default_value = "binomial")]
        family: FamilyKind,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        replicates: usize,
        /// Replicate-level worker threads (default: all cores).
        #[arg(long)]
        workers: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Fit a model to a rate-table CSV or a dataset JSON.
    Fit {
        /// Rate-table CSV, or a dataset JSON (`ApcDataset::save`).
        #[arg(long)]
        data: PathBuf,
        /// fa, rss or pss.
        #[arg(long, default_value = "pss")]
        kind: ModelKind,
        #[arg(long, default_value = "cohort")]
        drop: SlopeDrop,
        /// Knots per dimension as `age,period,cohort`, or `auto`.
        #[arg(long, default_value = "10,10,20", value_parser = commands::parse_knots)]
        knots: KnotCounts,
        /// Add a cyclic component to period and cohort (unequal intervals only).
        #[arg(long)]
        augment_periodic: bool,
        /// Fixed smoothing parameters, comma-separated, one per curvature block.
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
        /// Keep fractional counts instead of rounding them.
        #[arg(long)]
        no_round: bool,
        /// Keep ages in `lo,hi` (half-open, on cell starts).
        #[arg(long, value_parser = commands::parse_range)]
        age_range: Option<[f64; 2]>,
        /// Keep periods in `lo,hi`.
        #[arg(long, value_parser = commands::parse_range)]
        period_range: Option<[f64; 2]>,
        #[command(flatten)]
        common: Common,
    },
    /// Pool a rate-table CSV into wider age and period groups.
    Aggregate {
        #[arg(long)]
        input: PathBuf,
        /// Age groups pooled per output group.
        #[arg(long, default_value_t = 1)]
        age: usize,
        /// Periods pooled per output group.
        #[arg(long, default_value_t = 1)]
        period: usize,
        /// Round counts to integers after pooling.
        #[arg(long)]
        round: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Write a synthetic single-year mortality table (CSV) for trying the pipeline.
    Synthesize {
        #[arg(long, default_value_t = 1926)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Recompute effect and curvature tables from a fitted model.
    Effects {
        /// `model.json` written by `fit`.
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate { profile, family, seed, replicates, workers, common } => {
            let flags = SimConfig::profile(profile, family, seed).with_replicates(replicates);
            let cfg = config::resolve(&flags, common.config.as_deref())?;
            let out = config::output_dir(&common.out, common.output_root.as_deref());
            commands::simulate(&cfg, workers, &out)?;
            eprintln!("wrote {}", out.display());
        }
        Command::Fit {
            data,
            kind,
            drop,
            knots,
            augment_periodic,
            lambdas,
            no_round,
            age_range,
            period_range,
            common,
        } => {
            let flags = FitConfig { kind, drop, knots, augment_periodic, lambdas, round: !no_round, age_range, period_range };
            let cfg = config::resolve(&flags, common.config.as_deref())?;
            let out = config::output_dir(&common.out, common.output_root.as_deref());
            commands::fit(&data, &cfg, &out)?;
            eprintln!("wrote {}", out.display());
        }
        Command::Aggregate { input, age, period, round, common } => {
            let cfg = config::resolve(&AggregateConfig { age, period, round }, common.config.as_deref())?;
            let out = config::output_dir(&common.out, common.output_root.as_deref());
            let path = commands::aggregate(&input, &cfg, &out)?;
            eprintln!("wrote {}", path.display());
        }
        Command::Synthesize { seed, common } => {
            let flags = SyntheticMortality { seed, ..SyntheticMortality::default() };
            let cfg = config::resolve(&flags, common.config.as_deref())?;
            let out = config::output_dir(&common.out, common.output_root.as_deref());
            let path = commands::synthesize(&cfg, &out)?;
            eprintln!("wrote {}", path.display());
        }
        Command::Effects { model, common } => {
            let out = config::output_dir(&common.out, common.output_root.as_deref());
            commands::effects(&model, &out)?;
            eprintln!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<ApcError>() {
        Some(ApcError::Numerical(_)) | Some(ApcError::RankDeficient { .. }) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numerical_failures_exit_3() {
        let e = anyhow::Error::from(ApcError::Numerical("singular".into()));
        assert_eq!(exit_code(&e), 3);
        let e = anyhow::Error::from(ApcError::RankDeficient { expected: 2, detected: 1 });
        assert_eq!(exit_code(&e), 3);
        let e = anyhow::Error::from(ApcError::Config("bad".into()));
        assert_eq!(exit_code(&e), 2);
        assert_eq!(exit_code(&anyhow::anyhow!("io")), 2);
    }
}
