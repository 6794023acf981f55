use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gapscope::experiment::{run_to_dir, ExperimentConfig, ExperimentKind};

/// Local SGD gap-subspace experiments. Each subcommand runs one protocol and
/// writes CSV telemetry plus a key=value manifest.
#[derive(Parser, Debug)]
#[command(name = "gapscope", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Leading Hessian eigenvalues over training.
    Spectrum(RunArgs),
    /// Alignment of the full-batch gradient with the dominant subspace.
    Alignment(RunArgs),
    /// Dominant- and bulk-projected continuations from a checkpoint.
    DomBulk(RunArgs),
    /// Dominant-component removal by gap buffers of several capacities.
    GapSweep(RunArgs),
    /// Gap sweep repeated for several communication periods.
    TauAblation(RunArgs),
    /// Filtered synchronization over dominant/bulk gain grids.
    FilterSweep(RunArgs),
    /// Monte-Carlo check of the predicted gap covariance.
    VerifyTheory(RunArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write EMA-smoothed copies of the telemetry with this beta.
    #[arg(long)]
    ema: Option<f64>,
    /// Overrides `engine.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

impl Command {
    fn split(self) -> (ExperimentKind, RunArgs) {
        match self {
            Command::Spectrum(a) => (ExperimentKind::Spectrum, a),
            Command::Alignment(a) => (ExperimentKind::Alignment, a),
            Command::DomBulk(a) => (ExperimentKind::DomBulk, a),
            Command::GapSweep(a) => (ExperimentKind::GapSweep, a),
            Command::TauAblation(a) => (ExperimentKind::TauAblation, a),
            Command::FilterSweep(a) => (ExperimentKind::FilterSweep, a),
            Command::VerifyTheory(a) => (ExperimentKind::VerifyTheory, a),
        }
    }
}

fn run(kind: ExperimentKind, args: RunArgs) -> gapscope::Result<PathBuf> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if cfg.experiment != kind {
        eprintln!("note: config names `{}`, running `{}`", cfg.experiment.name(), kind.name());
        cfg.experiment = kind;
    }
    if let Some(seed) = args.seed {
        cfg.engine.seed = seed;
    }
    let dir = args.out.or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
    cfg.output = Some(dir.clone());
    let out = run_to_dir(&cfg, &dir, args.ema)?;
    for t in &out.tables {
        println!("{}", dir.join(&t.name).display());
    }
    Ok(dir)
}

fn main() -> ExitCode {
    let (kind, args) = Cli::parse().command.split();
    match run(kind, args) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
