//! Elastic-net regression by cyclic coordinate descent, hyperparameter grid
//! search and subject-disjoint data splits.
//!
//! The objective, over z-scored features `Z` and intercept `b`, is
//!
//! ```text
//! (1/2n)·‖y − Zβ − b‖² + α·(ρ·‖β‖₁ + (1 − ρ)/2·‖β‖²)
//! ```
//!
//! with `ρ` the L1 ratio: `ρ = 0` is ridge, `ρ = 1` is lasso.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::ingest::Scope;
use crate::report::{self, sig6, Provenance};

pub const MIN_SUBJECTS: usize = 5;
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegressionError {
    #[error("{n} subjects, at least {MIN_SUBJECTS} required for a three-way split")]
    TooFewSubjects { n: usize },
    #[error("{n} samples, at least 2 required")]
    TooFewSamples { n: usize },
    #[error("non-finite value in design matrix or target")]
    NonFinite,
    #[error("expected {expected} columns, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid hyperparameters: {0}")]
    InvalidArgument(String),
    #[error("no grid cell produced a finite validation error")]
    NoFiniteCell,
    #[error("model file: {0}")]
    ModelFormat(String),
}

pub type Result<T, E = RegressionError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    pub seed: u64,
    map: BTreeMap<String, Split>,
}

impl SplitAssignment {
    pub fn get(&self, subject: &str) -> Option<Split> {
        self.map.get(subject).copied()
    }

    pub fn subjects(&self, split: Split) -> impl Iterator<Item = &str> {
        self.map.iter().filter(move |(_, &s)| s == split).map(|(k, _)| k.as_str())
    }

    /// `(train, val, test)` subject counts.
    pub fn counts(&self) -> (usize, usize, usize) {
        let c = |s| self.subjects(s).count();
        (c(Split::Train), c(Split::Val), c(Split::Test))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Split)> {
        self.map.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

/// Assigns 60/20/20 of the distinct subjects to train/val/test. Subjects are
/// sorted before the seeded shuffle so the result does not depend on input
/// order.
pub fn make_splits<S: AsRef<str>>(subjects: &[S], seed: u64) -> Result<SplitAssignment> {
    let mut ids: Vec<String> = subjects.iter().map(|s| s.as_ref().to_string()).collect();
    ids.sort();
    ids.dedup();
    let n = ids.len();
    if n < MIN_SUBJECTS {
        return Err(RegressionError::TooFewSubjects { n });
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (0.6 * n as f64).round() as usize;
    let n_val = (0.2 * n as f64).round() as usize;
    let map = ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            (id, split)
        })
        .collect();
    Ok(SplitAssignment { seed, map })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverParams {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams { tol: 1e-6, max_iter: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElasticNetFit {
    /// Coefficients on z-scored features.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub feature_means: Vec<f64>,
    /// Population standard deviations; 1 for dropped constant features.
    pub feature_sds: Vec<f64>,
    pub alpha: f64,
    pub l1_ratio: f64,
    pub n_iters: usize,
    pub converged: bool,
    /// Penalized objective after each sweep. Empty for a fit read from disk.
    pub objective_trace: Vec<f64>,
}

impl ElasticNetFit {
    pub fn n_features(&self) -> usize {
        self.coefficients.len()
    }

    pub fn nonzero(&self) -> usize {
        self.coefficients.iter().filter(|&&b| b != 0.0).count()
    }
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

fn check_rows(x: &[Vec<f64>], p: usize) -> Result<()> {
    for row in x {
        if row.len() != p {
            return Err(RegressionError::DimensionMismatch { expected: p, found: row.len() });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(RegressionError::NonFinite);
        }
    }
    Ok(())
}

/// Fits the elastic net on row-major `x`. Stops when the largest coefficient
/// change in a sweep is below `tol`; otherwise returns the last iterate with
/// `converged = false`.
pub fn fit_elastic_net(x: &[Vec<f64>], y: &[f64], alpha: f64, l1_ratio: f64, params: SolverParams) -> Result<ElasticNetFit> {
    let n = x.len();
    if n < 2 {
        return Err(RegressionError::TooFewSamples { n });
    }
    if y.len() != n {
        return Err(RegressionError::DimensionMismatch { expected: n, found: y.len() });
    }
    if !(alpha >= 0.0 && alpha.is_finite()) || !(0.0..=1.0).contains(&l1_ratio) {
        return Err(RegressionError::InvalidArgument(format!("alpha = {alpha}, l1_ratio = {l1_ratio}")));
    }
    let p = x[0].len();
    check_rows(x, p)?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(RegressionError::NonFinite);
    }
    let nf = n as f64;

    let mut means = vec![0.0; p];
    let mut sds = vec![1.0; p];
    let mut active = vec![false; p];
    // Column-major standardized design.
    let mut z = vec![vec![0.0; n]; p];
    for j in 0..p {
        let mean = x.iter().map(|r| r[j]).sum::<f64>() / nf;
        let sd = (x.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / nf).sqrt();
        let scale = x.iter().fold(0.0_f64, |a, r| a.max(r[j].abs()));
        means[j] = mean;
        if sd > 1e-12 * scale.max(f64::MIN_POSITIVE) {
            sds[j] = sd;
            active[j] = true;
            for (i, row) in x.iter().enumerate() {
                z[j][i] = (row[j] - mean) / sd;
            }
        }
    }
    let curvature: Vec<f64> = z.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>() / nf).collect();

    let y_mean = y.iter().sum::<f64>() / nf;
    let mut resid: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let mut beta = vec![0.0; p];
    let l1 = alpha * l1_ratio;
    let l2 = alpha * (1.0 - l1_ratio);
    let objective = |resid: &[f64], beta: &[f64]| {
        let loss = resid.iter().map(|r| r * r).sum::<f64>() / (2.0 * nf);
        let pen = beta.iter().map(|b| l1 * b.abs() + 0.5 * l2 * b * b).sum::<f64>();
        loss + pen
    };

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iters = 0;
    while iters < params.max_iter {
        iters += 1;
        let mut max_change = 0.0_f64;
        for j in (0..p).filter(|&j| active[j]) {
            let col = &z[j];
            let rho = col.iter().zip(&resid).map(|(a, r)| a * r).sum::<f64>() / nf + curvature[j] * beta[j];
            let new = soft_threshold(rho, l1) / (curvature[j] + l2);
            let delta = new - beta[j];
            if delta != 0.0 {
                for (r, a) in resid.iter_mut().zip(col) {
                    *r -= delta * a;
                }
                beta[j] = new;
            }
            max_change = max_change.max(delta.abs());
        }
        trace.push(objective(&resid, &beta));
        if max_change < params.tol {
            converged = true;
            break;
        }
    }

    Ok(ElasticNetFit {
        coefficients: beta,
        intercept: y_mean,
        feature_means: means,
        feature_sds: sds,
        alpha,
        l1_ratio,
        n_iters: iters,
        converged,
        objective_trace: trace,
    })
}

pub fn predict(fit: &ElasticNetFit, x: &[Vec<f64>]) -> Result<Vec<f64>> {
    let p = fit.n_features();
    check_rows(x, p)?;
    Ok(x
        .iter()
        .map(|row| {
            fit.intercept
                + (0..p).map(|j| (row[j] - fit.feature_means[j]) / fit.feature_sds[j] * fit.coefficients[j]).sum::<f64>()
        })
        .collect())
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> f64 {
    (pred.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / pred.len() as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperGrid {
    pub alphas: Vec<f64>,
    pub l1_ratios: Vec<f64>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        HyperGrid { alphas: vec![0.01, 0.05, 0.1, 0.5, 1.0], l1_ratios: (0..=10).map(|i| i as f64 / 10.0).collect() }
    }
}

impl HyperGrid {
    pub fn cells(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.alphas.iter().flat_map(move |&a| self.l1_ratios.iter().map(move |&l| (a, l)))
    }

    pub fn len(&self) -> usize {
        self.alphas.len() * self.l1_ratios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Data the winning hyperparameters are refit on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefitMode {
    #[default]
    TrainOnly,
    TrainVal,
}

#[derive(Debug, Clone, Copy)]
pub struct Dataset<'a> {
    pub x: &'a [Vec<f64>],
    pub y: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub alpha: f64,
    pub l1_ratio: f64,
    pub val_rmse: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub alpha: f64,
    pub l1_ratio: f64,
    pub fit: ElasticNetFit,
    pub cells: Vec<GridCell>,
}

/// Fits every grid cell on `train`, picks the lowest validation RMSE and
/// refits per `refit`. Near-ties (relative 1e-12) go to the larger alpha,
/// then the larger L1 ratio.
pub fn grid_search(train: Dataset, val: Dataset, grid: &HyperGrid, params: SolverParams, refit: RefitMode) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(RegressionError::InvalidArgument("empty grid".into()));
    }
    let cells: Vec<(f64, f64)> = grid.cells().collect();
    let fitted: Vec<(GridCell, ElasticNetFit)> = cells
        .par_iter()
        .map(|&(alpha, l1_ratio)| {
            let fit = fit_elastic_net(train.x, train.y, alpha, l1_ratio, params)?;
            let val_rmse = rmse(&predict(&fit, val.x)?, val.y);
            Ok((GridCell { alpha, l1_ratio, val_rmse, converged: fit.converged }, fit))
        })
        .collect::<Result<_>>()?;

    let best_rmse = fitted.iter().map(|(c, _)| c.val_rmse).filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min);
    if !best_rmse.is_finite() {
        return Err(RegressionError::NoFiniteCell);
    }
    let cutoff = best_rmse + 1e-12 * best_rmse.max(f64::MIN_POSITIVE);
    let (winner, winner_fit) = fitted
        .iter()
        .filter(|(c, _)| c.val_rmse <= cutoff)
        .max_by(|(a, _), (b, _)| a.alpha.total_cmp(&b.alpha).then(a.l1_ratio.total_cmp(&b.l1_ratio)))
        .expect("at least one cell within cutoff");
    let (alpha, l1_ratio) = (winner.alpha, winner.l1_ratio);

    let fit = match refit {
        RefitMode::TrainOnly => winner_fit.clone(),
        RefitMode::TrainVal => {
            let x: Vec<Vec<f64>> = train.x.iter().chain(val.x).cloned().collect();
            let y: Vec<f64> = train.y.iter().chain(val.y).copied().collect();
            fit_elastic_net(&x, &y, alpha, l1_ratio, params)?
        }
    };
    Ok(GridResult { alpha, l1_ratio, fit, cells: fitted.into_iter().map(|(c, _)| c).collect() })
}

/// A fitted model as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub scope: Scope,
    pub seed: u64,
    pub feature_names: Vec<String>,
    pub fit: ElasticNetFit,
}

pub fn write_model<W: Write>(mut out: W, model: &ModelFile) -> std::io::Result<()> {
    let fit = &model.fit;
    writeln!(out, "format_version = {MODEL_FORMAT_VERSION}")?;
    writeln!(out, "task = {}", model.scope)?;
    writeln!(out, "seed = {}", model.seed)?;
    writeln!(out, "alpha = {}", fit.alpha)?;
    writeln!(out, "l1_ratio = {}", fit.l1_ratio)?;
    writeln!(out, "intercept = {}", fit.intercept)?;
    writeln!(out, "n_iters = {}", fit.n_iters)?;
    writeln!(out, "converged = {}", fit.converged)?;
    for (j, name) in model.feature_names.iter().enumerate() {
        writeln!(out, "coef.{name} = {}", fit.coefficients[j])?;
    }
    for (j, name) in model.feature_names.iter().enumerate() {
        writeln!(out, "mean.{name} = {}", fit.feature_means[j])?;
    }
    for (j, name) in model.feature_names.iter().enumerate() {
        writeln!(out, "sd.{name} = {}", fit.feature_sds[j])?;
    }
    Ok(())
}

pub fn read_model<R: BufRead>(input: R) -> Result<ModelFile> {
    let bad = |m: String| RegressionError::ModelFormat(m);
    let mut kv: Vec<(String, String)> = Vec::new();
    for line in input.lines() {
        let line = line.map_err(|e| bad(e.to_string()))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("expected `key = value`, got `{line}`")))?;
        kv.push((k.trim().to_string(), v.trim().to_string()));
    }
    let get = |key: &str| kv.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str()).ok_or_else(|| bad(format!("missing key `{key}`")));
    fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
        v.parse().map_err(|_| RegressionError::ModelFormat(format!("bad value `{v}` for `{key}`")))
    }

    let version: u32 = parse("format_version", get("format_version")?)?;
    if version != MODEL_FORMAT_VERSION {
        return Err(bad(format!("unsupported format_version {version}")));
    }
    let scope: Scope = get("task")?.parse().map_err(|e: crate::ingest::IngestError| bad(e.to_string()))?;
    let names: Vec<String> = kv.iter().filter_map(|(k, _)| k.strip_prefix("coef.")).map(str::to_string).collect();
    let per_feature = |prefix: &str| -> Result<Vec<f64>> {
        names.iter().map(|n| parse(&format!("{prefix}{n}"), get(&format!("{prefix}{n}"))?)).collect()
    };
    let fit = ElasticNetFit {
        coefficients: per_feature("coef.")?,
        intercept: parse("intercept", get("intercept")?)?,
        feature_means: per_feature("mean.")?,
        feature_sds: per_feature("sd.")?,
        alpha: parse("alpha", get("alpha")?)?,
        l1_ratio: parse("l1_ratio", get("l1_ratio")?)?,
        n_iters: parse("n_iters", get("n_iters")?)?,
        converged: parse("converged", get("converged")?)?,
        objective_trace: Vec::new(),
    };
    if fit.feature_sds.iter().any(|&s| !(s > 0.0)) {
        return Err(bad("feature standard deviations must be positive".into()));
    }
    Ok(ModelFile { scope, seed: parse("seed", get("seed")?)?, feature_names: names, fit })
}

pub const WEIGHTS_HEADER: [&str; 3] = ["task", "feature", "standardized_weight"];

/// Standardized coefficients per model, one row per feature.
pub fn write_weights<W: Write>(out: W, models: &[ModelFile], provenance: Option<&Provenance>) -> std::io::Result<()> {
    report::write_csv(
        out,
        provenance,
        &WEIGHTS_HEADER,
        models.iter().flat_map(|m| {
            m.feature_names
                .iter()
                .zip(&m.fit.coefficients)
                .map(|(name, &b)| vec![m.scope.label().to_string(), name.clone(), sig6(b)])
        }),
    )
}
