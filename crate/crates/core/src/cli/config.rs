//! Pipeline configuration file.
//!
//! ```toml
//! seed = 42
//! tasks = ["startle", "pain", "disgust"]
//! regime = "both"            # per-task | all-tasks | both
//! refit = "train-only"       # train-only | train-val
//! raters_per_clip = 6
//! confidence = 0.95
//!
//! [paths]
//! ratings = "ratings.csv"
//! tracking_dir = "tracking"
//! out_dir = "out"
//!
//! [grid]
//! alphas = [0.01, 0.05, 0.1, 0.5, 1.0]
//! l1_ratios = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]
//!
//! [solver]
//! tol = 1e-6
//! max_iter = 10000
//!
//! [bootstrap]
//! resamples = 2000
//!
//! [[external]]
//! name = "OpenFace-LSTM"
//! predictions = "lstm.csv"   # clip_id,prediction
//!
//! [synth]                    # only read by `synth`
//! n_subjects = 100
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliError;
use crate::ingest::Task;
use crate::regression::{HyperGrid, RefitMode, SolverParams};
use crate::report::Provenance;
use crate::synth::SynthConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    PerTask,
    AllTasks,
    Both,
}

impl Regime {
    pub fn per_task(self) -> bool {
        matches!(self, Regime::PerTask | Regime::Both)
    }

    pub fn all_tasks(self) -> bool {
        matches!(self, Regime::AllTasks | Regime::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub ratings: PathBuf,
    pub tracking_dir: PathBuf,
    /// Where outputs go; left out of the provenance hash.
    #[serde(skip_serializing)]
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths { ratings: "ratings.csv".into(), tracking_dir: "tracking".into(), out_dir: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub alphas: Vec<f64>,
    pub l1_ratios: Vec<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        let g = HyperGrid::default();
        GridConfig { alphas: g.alphas, l1_ratios: g.l1_ratios }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let p = SolverParams::default();
        SolverConfig { tol: p.tol, max_iter: p.max_iter }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub resamples: usize,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { resamples: crate::evaluation::DEFAULT_RESAMPLES }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalModel {
    pub name: String,
    pub predictions: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub tasks: Vec<Task>,
    pub regime: Regime,
    pub refit: RefitMode,
    pub raters_per_clip: usize,
    pub confidence: f64,
    pub paths: Paths,
    pub grid: GridConfig,
    pub solver: SolverConfig,
    pub bootstrap: BootstrapConfig,
    pub external: Vec<ExternalModel>,
    pub synth: SynthConfig,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            tasks: Task::RATED.to_vec(),
            regime: Regime::Both,
            refit: RefitMode::TrainOnly,
            raters_per_clip: 6,
            confidence: 0.95,
            paths: Paths::default(),
            grid: GridConfig::default(),
            solver: SolverConfig::default(),
            bootstrap: BootstrapConfig::default(),
            external: Vec::new(),
            synth: SynthConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = toml::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn ratings_path(&self) -> PathBuf {
        self.resolve(&self.paths.ratings)
    }

    pub fn tracking_dir(&self) -> PathBuf {
        self.resolve(&self.paths.tracking_dir)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.paths.out_dir)
    }

    pub fn hyper_grid(&self) -> HyperGrid {
        HyperGrid { alphas: self.grid.alphas.clone(), l1_ratios: self.grid.l1_ratios.clone() }
    }

    pub fn solver_params(&self) -> SolverParams {
        SolverParams { tol: self.solver.tol, max_iter: self.solver.max_iter }
    }

    /// Tasks to analyse, deduplicated in canonical order.
    pub fn task_list(&self) -> Vec<Task> {
        let mut t = self.tasks.clone();
        t.sort();
        t.dedup();
        t
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Validation(m));
        if let Some(t) = self.tasks.iter().find(|t| !Task::RATED.contains(t)) {
            return bad(format!("task `{t}` has no ratings; use startle, pain or disgust"));
        }
        if self.tasks.is_empty() {
            return bad("no tasks selected".into());
        }
        if self.raters_per_clip < 2 {
            return bad("raters_per_clip must be at least 2".into());
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return bad(format!("confidence {} outside (0, 1)", self.confidence));
        }
        if self.grid.alphas.is_empty() || self.grid.l1_ratios.is_empty() {
            return bad("hyperparameter grid is empty".into());
        }
        if self.grid.alphas.iter().any(|a| !(*a >= 0.0)) || self.grid.l1_ratios.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return bad("grid values must be alpha >= 0 and 0 <= l1_ratio <= 1".into());
        }
        if !(self.solver.tol > 0.0) || self.solver.max_iter == 0 {
            return bad("solver tol must be positive and max_iter at least 1".into());
        }
        Ok(())
    }

    /// SHA-256 of the effective configuration serialized as TOML.
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn provenance(&self) -> Provenance {
        Provenance { config_hash: self.hash(), seed: self.seed }
    }
}
