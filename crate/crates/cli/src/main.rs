//! `tightprop` experiment driver.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration or parameter
//! error, 3 filesystem refusal, 4 numeric divergence.

mod commands;
mod config;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ExperimentConfig, ExperimentKind};
use manifest::Recorder;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("refusing to proceed: {0}")]
    Refusal(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Lib(#[from] tightprop::Error),
}

impl CliError {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    fn exit_code(&self) -> u8 {
        use tightprop::Error as E;
        match self {
            CliError::Config { .. } => 2,
            CliError::Lib(E::Parameter { .. } | E::Dimension { .. } | E::Json(_)) => 2,
            CliError::Refusal(_) => 3,
            CliError::Lib(E::Divergence { .. }) => 4,
            _ => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "tightprop", version, about = "Expected tight bounds experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Γ of the expected bounds against sampled output ranges.
    Correctness(Args),
    /// Width difference and ratio between IBP and the expected bounds.
    Tightness(Args),
    /// Sampled 2-D output clouds with both bound rectangles.
    Polytope(Args),
    /// Nominal and robust training.
    Train(Args),
    /// PGD evaluation of saved models.
    Evaluate(Args),
    /// Monte-Carlo checks of the distributional results.
    Stats(Args),
}

#[derive(clap::Args, Debug)]
struct Args {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory; overrides the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override every trial count.
    #[arg(long)]
    trials: Option<usize>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    dry_run: bool,
    /// Overwrite existing checkpoints.
    #[arg(long)]
    force: bool,
}

impl Command {
    fn split(&self) -> (ExperimentKind, &Args) {
        match self {
            Command::Correctness(a) => (ExperimentKind::Correctness, a),
            Command::Tightness(a) => (ExperimentKind::Tightness, a),
            Command::Polytope(a) => (ExperimentKind::Polytope, a),
            Command::Train(a) => (ExperimentKind::Train, a),
            Command::Evaluate(a) => (ExperimentKind::Evaluate, a),
            Command::Stats(a) => (ExperimentKind::Stats, a),
        }
    }
}

fn validate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let at = |section: &'static str| {
        move |e: tightprop::Error| match e {
            tightprop::Error::Parameter { name, reason } => CliError::config(format!("{section}.{name}"), reason),
            other => CliError::Lib(other),
        }
    };
    if let Some(c) = &cfg.correctness {
        c.validate().map_err(at("correctness"))?;
    }
    if let Some(c) = &cfg.tightness {
        c.validate().map_err(at("tightness"))?;
    }
    Ok(())
}

fn execute(kind: ExperimentKind, args: &Args) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if cfg.experiment != kind {
        return Err(CliError::config(
            "experiment",
            format!("configuration is for `{}`, not `{}`", cfg.experiment.name(), kind.name()),
        ));
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = Some(out.clone());
    }
    if let Some(t) = args.trials {
        cfg.override_trials(t);
    }
    cfg.check_sections()?;
    validate(&cfg)?;

    if args.dry_run {
        println!("{}", serde_json::to_string_pretty(&cfg).expect("configuration serializes"));
        return Ok(());
    }
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config("--threads", e.to_string()))?;
    }
    let dir = cfg
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(cfg.stem()));
    let mut rec = Recorder::new(&dir)?;
    commands::run(&cfg, &mut rec, &commands::RunOptions { force: args.force })?;
    let manifest = rec.finish(kind.name(), cfg.hash(), cfg.seed)?;
    println!("wrote {} file(s) and manifest to {}", manifest.outputs.len(), dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = cli.command.split();
    match execute(kind, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
