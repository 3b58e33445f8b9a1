//! Metrics, random and human baselines, cluster-bootstrap model comparison
//! and the performance/comparison reports.
//!
//! A model's predictions are held as one or more [`Panel`]s over a shared
//! clip index. Ordinary models have a single panel. The human baseline has
//! one panel per rater, each with its own clips and reference values, and its
//! metric is the average over raters.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, Uniform};
use rayon::prelude::*;
use thiserror::Error;

use crate::ingest::{ClipId, Scope, Task};
use crate::psychometrics::RaterOutcome;
use crate::report::{self, sig6_opt, Provenance};

/// Width of the theoretical score range, ±3.5.
pub const SCORE_RANGE: f64 = 7.0;
pub const MIN_RESAMPLES: usize = 1000;
pub const DEFAULT_RESAMPLES: usize = 2000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("zero variance; correlation undefined")]
    ZeroVariance,
    #[error("only one cluster; bootstrap intervals are degenerate")]
    SingleCluster,
    #[error("{n} resamples requested, at least {MIN_RESAMPLES} required")]
    TooFewResamples { n: usize },
    #[error("models are not evaluated on the same clips")]
    MismatchedClips,
    #[error("clip index {0} outside the cluster map")]
    UnknownClip(usize),
    #[error("no bootstrap replicate produced a defined value")]
    NoValidReplicates,
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

/// RMSE divided by the width of the score range.
pub fn nrmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let mse = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64;
    Ok(mse.sqrt() / SCORE_RANGE)
}

pub fn pearson(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth)?;
    weighted_pearson(pred.iter().zip(truth).map(|(&p, &t)| (p, t, 1.0))).ok_or(EvalError::ZeroVariance)
}

fn weighted_nrmse(items: impl Iterator<Item = (f64, f64, f64)>) -> Option<f64> {
    let (mut se, mut w) = (0.0, 0.0);
    for (p, t, wt) in items {
        se += wt * (p - t).powi(2);
        w += wt;
    }
    (w > 0.0).then(|| (se / w).sqrt() / SCORE_RANGE)
}

fn weighted_pearson(items: impl Iterator<Item = (f64, f64, f64)> + Clone) -> Option<f64> {
    let (mut w, mut sp, mut st) = (0.0, 0.0, 0.0);
    let (mut maxp, mut maxt) = (0.0_f64, 0.0_f64);
    for (p, t, wt) in items.clone() {
        w += wt;
        sp += wt * p;
        st += wt * t;
        if wt > 0.0 {
            maxp = maxp.max(p.abs());
            maxt = maxt.max(t.abs());
        }
    }
    if !(w > 0.0) {
        return None;
    }
    let (mp, mt) = (sp / w, st / w);
    let (mut cov, mut vp, mut vt) = (0.0, 0.0, 0.0);
    for (p, t, wt) in items {
        cov += wt * (p - mp) * (t - mt);
        vp += wt * (p - mp).powi(2);
        vt += wt * (t - mt).powi(2);
    }
    let (sdp, sdt) = ((vp / w).sqrt(), (vt / w).sqrt());
    if !(sdp > 1e-12 * maxp.max(f64::MIN_POSITIVE)) || !(sdt > 1e-12 * maxt.max(f64::MIN_POSITIVE)) {
        return None;
    }
    Some((cov / (vp * vt).sqrt()).clamp(-1.0, 1.0))
}

/// i.i.d. Uniform(−3.5, 3.5) draws from ChaCha8 seeded with `seed`.
pub fn uniform_baseline(n: usize, seed: u64) -> Vec<f64> {
    let dist = Uniform::new_inclusive(-SCORE_RANGE / 2.0, SCORE_RANGE / 2.0).expect("valid bounds");
    ChaCha8Rng::seed_from_u64(seed).sample_iter(dist).take(n).collect()
}

/// i.i.d. N(0, 1) draws: ziggurat sampling over ChaCha8 seeded with `seed`.
pub fn normal_baseline(n: usize, seed: u64) -> Vec<f64> {
    ChaCha8Rng::seed_from_u64(seed).sample_iter(StandardNormal).take(n).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    /// Indices into the shared clip list.
    pub clips: Vec<usize>,
    pub pred: Vec<f64>,
    pub truth: Vec<f64>,
}

impl Panel {
    pub fn new(clips: Vec<usize>, pred: Vec<f64>, truth: Vec<f64>) -> Result<Self> {
        check_lengths(&pred, &truth)?;
        if clips.len() != pred.len() {
            return Err(EvalError::LengthMismatch(clips.len(), pred.len()));
        }
        Ok(Panel { clips, pred, truth })
    }

    fn weighted<'a>(&'a self, weights: Option<&'a [f64]>) -> impl Iterator<Item = (f64, f64, f64)> + Clone + 'a {
        self.clips.iter().zip(&self.pred).zip(&self.truth).map(move |((&c, &p), &t)| (p, t, weights.map_or(1.0, |w| w[c])))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredModel {
    pub name: String,
    pub panels: Vec<Panel>,
    /// Panels that could not be formed, e.g. raters with constant answers.
    pub n_dropped: usize,
}

/// NRMSE and correlation, either possibly undefined.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Metrics {
    pub nrmse: Option<f64>,
    pub corr: Option<f64>,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (s, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl ScoredModel {
    pub fn single(name: impl Into<String>, panel: Panel) -> Self {
        ScoredModel { name: name.into(), panels: vec![panel], n_dropped: 0 }
    }

    /// Metrics with clip `c` counted `weights[c]` times; unit weights when `None`.
    /// For several panels each metric is averaged over panels where it is defined.
    pub fn metrics(&self, weights: Option<&[f64]>) -> Metrics {
        Metrics {
            nrmse: mean_defined(self.panels.iter().map(|p| weighted_nrmse(p.weighted(weights)))),
            corr: mean_defined(self.panels.iter().map(|p| weighted_pearson(p.weighted(weights)))),
        }
    }

    /// Keeps only clips for which `keep` holds, dropping emptied panels.
    pub fn filter(&self, keep: impl Fn(usize) -> bool) -> ScoredModel {
        let panels = self
            .panels
            .iter()
            .filter_map(|p| {
                let idx: Vec<usize> = (0..p.clips.len()).filter(|&i| keep(p.clips[i])).collect();
                (!idx.is_empty()).then(|| Panel {
                    clips: idx.iter().map(|&i| p.clips[i]).collect(),
                    pred: idx.iter().map(|&i| p.pred[i]).collect(),
                    truth: idx.iter().map(|&i| p.truth[i]).collect(),
                })
            })
            .collect();
        ScoredModel { name: self.name.clone(), panels, n_dropped: self.n_dropped }
    }

    fn clip_set(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.panels.iter().flat_map(|p| p.clips.iter().copied()).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Human-baseline panels from per-rater outcomes; raters whose scores could
/// not be standardized, and clips outside `index_of`, are left out.
pub fn human_model(name: impl Into<String>, outcomes: &[RaterOutcome], index_of: impl Fn(&ClipId) -> Option<usize>) -> ScoredModel {
    let mut panels = Vec::new();
    let mut dropped = 0;
    for o in outcomes {
        let Ok(pairs) = &o.pairs else {
            dropped += 1;
            continue;
        };
        let (mut clips, mut pred, mut truth) = (Vec::new(), Vec::new(), Vec::new());
        for ((c, &p), &t) in pairs.clips.iter().zip(&pairs.predicted).zip(&pairs.target) {
            if let Some(i) = index_of(c) {
                clips.push(i);
                pred.push(p);
                truth.push(t);
            }
        }
        if clips.is_empty() {
            continue;
        }
        panels.push(Panel { clips, pred, truth });
    }
    ScoredModel { name: name.into(), panels, n_dropped: dropped }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricDelta {
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    /// Replicates where the difference was defined.
    pub n_used: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapComparison {
    /// NRMSE(A) − NRMSE(B).
    pub delta_nrmse: Result<MetricDelta>,
    /// corr(A) − corr(B).
    pub delta_corr: Result<MetricDelta>,
    pub n_resamples: usize,
    pub seed: u64,
}

/// Clip-to-cluster map with each cluster's members.
#[derive(Debug, Clone)]
pub struct Clusters {
    of_clip: Vec<usize>,
    n: usize,
}

impl Clusters {
    /// `of_clip[c]` is the cluster of clip `c`; cluster ids need not be dense.
    pub fn new(of_clip: &[usize]) -> Self {
        let mut ids = of_clip.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let dense = of_clip.iter().map(|c| ids.binary_search(c).unwrap()).collect();
        Clusters { of_clip: dense, n: ids.len() }
    }

    pub fn from_labels<S: Ord>(labels: &[S]) -> Self {
        let mut sorted: Vec<&S> = labels.iter().collect();
        sorted.sort();
        sorted.dedup();
        let of_clip: Vec<usize> = labels.iter().map(|l| sorted.binary_search(&l).unwrap()).collect();
        Clusters { n: sorted.len(), of_clip }
    }

    pub fn n_clusters(&self) -> usize {
        self.n
    }

    pub fn n_clips(&self) -> usize {
        self.of_clip.len()
    }

    /// Per-clip weights for a vector of per-cluster draw counts.
    pub fn clip_weights(&self, counts: &[u32]) -> Vec<f64> {
        self.of_clip.iter().map(|&k| counts[k] as f64).collect()
    }
}

/// Metric differences `A − B` when clip `c` appears `weights[c]` times.
pub fn deltas(a: &ScoredModel, b: &ScoredModel, weights: Option<&[f64]>) -> (Option<f64>, Option<f64>) {
    let (ma, mb) = (a.metrics(weights), b.metrics(weights));
    (ma.nrmse.zip(mb.nrmse).map(|(x, y)| x - y), ma.corr.zip(mb.corr).map(|(x, y)| x - y))
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn summarize(estimate: Option<f64>, mut reps: Vec<f64>, n_resamples: usize) -> Result<MetricDelta> {
    let estimate = estimate.ok_or(EvalError::ZeroVariance)?;
    if reps.is_empty() {
        return Err(EvalError::NoValidReplicates);
    }
    reps.sort_by(f64::total_cmp);
    let n = reps.len() as f64;
    let le = reps.iter().filter(|&&d| d <= 0.0).count() as f64 / n;
    let ge = reps.iter().filter(|&&d| d >= 0.0).count() as f64 / n;
    let p_value = (2.0 * le.min(ge)).min(1.0).max(1.0 / n_resamples as f64);
    Ok(MetricDelta { estimate, ci_low: quantile(&reps, 0.025), ci_high: quantile(&reps, 0.975), p_value, n_used: reps.len() })
}

/// Compares A with B by resampling whole clusters with replacement.
///
/// Replicate `i` draws from `ChaCha8Rng::seed_from_u64(seed)` on stream `i`,
/// so results do not depend on thread scheduling. Intervals are the 2.5 and
/// 97.5 percentiles; replicates where a difference is undefined are skipped
/// for that metric.
pub fn cluster_bootstrap(a: &ScoredModel, b: &ScoredModel, clusters: &Clusters, n_resamples: usize, seed: u64) -> Result<BootstrapComparison> {
    if n_resamples < MIN_RESAMPLES {
        return Err(EvalError::TooFewResamples { n: n_resamples });
    }
    let clips = a.clip_set();
    if clips != b.clip_set() {
        return Err(EvalError::MismatchedClips);
    }
    if let Some(&bad) = clips.iter().find(|&&c| c >= clusters.n_clips()) {
        return Err(EvalError::UnknownClip(bad));
    }
    // Only clusters that own evaluated clips take part.
    let involved = Clusters::new(&clips.iter().map(|&c| clusters.of_clip[c]).collect::<Vec<_>>());
    let k = involved.n_clusters();
    if k < 2 {
        return Err(EvalError::SingleCluster);
    }
    let mut local = vec![usize::MAX; clusters.n_clips()];
    for (i, &c) in clips.iter().enumerate() {
        local[c] = involved.of_clip[i];
    }

    let (est_n, est_c) = deltas(a, b, None);
    let reps: Vec<(Option<f64>, Option<f64>)> = (0..n_resamples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut counts = vec![0u32; k];
            for _ in 0..k {
                counts[rng.random_range(0..k)] += 1;
            }
            let weights: Vec<f64> = local.iter().map(|&l| if l == usize::MAX { 0.0 } else { counts[l] as f64 }).collect();
            deltas(a, b, Some(&weights))
        })
        .collect();
    Ok(BootstrapComparison {
        delta_nrmse: summarize(est_n, reps.iter().filter_map(|r| r.0).collect(), n_resamples),
        delta_corr: summarize(est_c, reps.iter().filter_map(|r| r.1).collect(), n_resamples),
        n_resamples,
        seed,
    })
}

/// Columns of the performance table, in order.
pub const TABLE_SCOPES: [Scope; 4] = [Scope::Task(Task::Startle), Scope::Task(Task::Pain), Scope::Task(Task::Disgust), Scope::All];

pub fn table3_header() -> Vec<String> {
    let mut h = vec!["model".to_string()];
    for metric in ["nrmse", "corr"] {
        h.extend(TABLE_SCOPES.iter().map(|s| format!("{metric}_{s}")));
    }
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table3Row {
    pub model: String,
    /// Indexed like [`TABLE_SCOPES`].
    pub metrics: [Metrics; 4],
}

pub fn write_table3<W: Write>(out: W, rows: &[Table3Row], provenance: Option<&Provenance>) -> std::io::Result<()> {
    let header = table3_header();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    report::write_csv(
        out,
        provenance,
        &header,
        rows.iter().map(|r| {
            let mut rec = vec![r.model.clone()];
            rec.extend(r.metrics.iter().map(|m| sig6_opt(m.nrmse)));
            rec.extend(r.metrics.iter().map(|m| sig6_opt(m.corr)));
            rec
        }),
    )
}

pub const TABLE4_HEADER: [&str; 9] = [
    "comparison",
    "delta_nrmse",
    "nrmse_ci_low",
    "nrmse_ci_high",
    "nrmse_p",
    "delta_corr",
    "corr_ci_low",
    "corr_ci_high",
    "corr_p",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Table4Row {
    pub comparison: String,
    pub result: BootstrapComparison,
}

fn delta_cells(d: &Result<MetricDelta>) -> [String; 4] {
    match d {
        Ok(d) => [d.estimate, d.ci_low, d.ci_high, d.p_value].map(|v| sig6_opt(Some(v))),
        Err(_) => Default::default(),
    }
}

/// Comparison table. A comment line per row records replicate usage.
pub fn write_table4<W: Write>(mut out: W, rows: &[Table4Row], provenance: Option<&Provenance>) -> std::io::Result<()> {
    if let Some(p) = provenance {
        p.write_header(&mut out)?;
    }
    for r in rows {
        let used = |d: &Result<MetricDelta>| d.as_ref().map_or(0, |d| d.n_used);
        writeln!(
            out,
            "# {}: resamples={} seed={} used_nrmse={} used_corr={}",
            r.comparison,
            r.result.n_resamples,
            r.result.seed,
            used(&r.result.delta_nrmse),
            used(&r.result.delta_corr)
        )?;
    }
    report::write_csv(
        out,
        None,
        &TABLE4_HEADER,
        rows.iter().map(|r| {
            let mut rec = vec![r.comparison.clone()];
            rec.extend(delta_cells(&r.result.delta_nrmse));
            rec.extend(delta_cells(&r.result.delta_corr));
            rec
        }),
    )
}
