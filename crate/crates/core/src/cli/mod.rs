//! Command-line driver: `score`, `featurize`, `train-eval` and `synth`.
//!
//! Exit codes: 0 on success, 2 for invalid input or configuration, 3 when a
//! numerical step fails.

pub mod commands;
pub mod config;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use commands::{cmd_featurize, cmd_score, cmd_synth, cmd_train_eval};
pub use config::{PipelineConfig, Regime};

use crate::evaluation::EvalError;
use crate::ingest::{IngestError, Task};
use crate::psychometrics::PsychometricsError;
use crate::regression::RegressionError;
use crate::synth::SynthError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Validation(format!("{}: {e}", path.display()))
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<PsychometricsError> for CliError {
    fn from(e: PsychometricsError) -> Self {
        use PsychometricsError::*;
        match e {
            InsufficientRaters { .. } | UnbalancedRatings { .. } | TooFewObservations { .. } | InvalidArgument(_) => {
                CliError::Validation(e.to_string())
            }
            DegenerateData | NonPositiveCovariance | AllZeroLoadings | StandardizationDegenerate { .. } | NonFinite => {
                CliError::Numerical(e.to_string())
            }
        }
    }
}

impl From<RegressionError> for CliError {
    fn from(e: RegressionError) -> Self {
        match e {
            RegressionError::NonFinite | RegressionError::NoFiniteCell => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::ZeroVariance | EvalError::NoValidReplicates => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Validation(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "expressiveness", version, about = "Momentary expressiveness scoring and prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Comma-separated task list, e.g. `startle,pain`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub tasks: Option<Vec<Task>>,
    #[arg(long, global = true, value_enum)]
    pub regime: Option<Regime>,
    /// Bootstrap resamples.
    #[arg(long, global = true)]
    pub resamples: Option<usize>,
    /// Output directory; for `synth`, where the study is written.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Reliability, CFA loadings and per-clip expressiveness scores.
    Score,
    /// Clip features from tracking files, joined with scores.
    Featurize,
    /// Split, tune, train, evaluate and compare models.
    TrainEval,
    /// Generate a synthetic study.
    Synth,
}

impl Cli {
    /// The effective configuration: file (or defaults) with flag overrides.
    pub fn effective_config(&self) -> Result<PipelineConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
            cfg.synth.seed = seed;
        }
        if let Some(t) = &self.tasks {
            cfg.tasks = t.clone();
        }
        if let Some(r) = self.regime {
            cfg.regime = r;
        }
        if let Some(n) = self.resamples {
            cfg.bootstrap.resamples = n;
        }
        if let Some(out) = &self.out {
            let cwd = std::env::current_dir().map_err(|e| CliError::Validation(e.to_string()))?;
            cfg.paths.out_dir = cwd.join(out);
        }
        Ok(cfg)
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = cli.effective_config()?;
    let out = cfg.out_dir();
    match cli.command {
        Command::Score => {
            let r = cmd_score(&cfg)?;
            println!("scored {} clips -> {}", r.scores.len(), out.display());
        }
        Command::Featurize => {
            let r = cmd_featurize(&cfg)?;
            println!("featurized {} clips ({} skipped) -> {}", r.rows.len(), r.skipped.len(), out.display());
        }
        Command::TrainEval => {
            let r = cmd_train_eval(&cfg)?;
            println!("trained {} models, evaluated {} test clips -> {}", r.models.len(), r.test_clips.len(), out.display());
        }
        Command::Synth => {
            let data = cmd_synth(&cfg, &out)?;
            println!("wrote {} synthetic clips -> {}", data.clips.len(), out.display());
        }
    }
    Ok(())
}
