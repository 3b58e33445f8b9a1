//! Seeded synthetic studies with known latent scores.
//!
//! Each clip draws standard normal `zⱼ` for nine features and targets
//! `Xⱼ = mⱼ + sⱼ·zⱼ`, clamped to values the renderer can realize. The latent
//! score is a noisy linear function of the draws, with unit variance:
//!
//! ```text
//! η = (Σⱼ wⱼ·zⱼ + e) / sqrt(‖w‖² + σ²),   e ~ N(0, σ²)
//! ```
//!
//! Rater `r` answers question `q` with `2 + μ_q + λ_q·η + N(0, k·ε_q)`, where `k`
//! is the number of raters per clip, so the mean over raters follows the
//! single-factor model with residual variance `ε_q`. Answers are written as
//! `round(clamp(·, 0, 4))`.
//!
//! Tracking is rendered so the feature extractor recovers the targets: per
//! 5 Hz step all landmarks shift by `d(t) = D + V·(t − 7.5)`, gaze, head
//! depth and rotations change by fixed increments, and the first `C` action
//! units are active at intensity `I`. Outside clip windows the face is still.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{ClipFeatures, FEATURE_NAMES};
use crate::ingest::{AuChannel, ClipId, Frame, IngestError, Rating, RatingsTable, Task, TrackingSequence, CLIP_FRAMES, FPS, LANDMARKS, MAX_ANSWER};
use crate::report;

/// Intensity-coded action units in OpenFace output order.
pub const INTENSITY_AUS: [&str; 17] =
    ["AU01", "AU02", "AU04", "AU05", "AU06", "AU07", "AU09", "AU10", "AU12", "AU14", "AU15", "AU17", "AU20", "AU23", "AU25", "AU26", "AU45"];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = SynthError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskWeights {
    pub task: Task,
    pub weights: [f64; 9],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_subjects: usize,
    /// Every subject contributes all windows of each task.
    pub tasks: Vec<Task>,
    pub n_raters: usize,
    /// Draw each clip's raters from `R1..=R{pool}` instead of using the same
    /// `n_raters` for every clip.
    pub rater_pool: Option<usize>,
    pub intercepts: [f64; 3],
    pub loadings: [f64; 3],
    pub residual_vars: [f64; 3],
    pub feature_weights: [f64; 9],
    /// Per-task replacements for `feature_weights`.
    pub task_weights: Vec<TaskWeights>,
    pub feature_noise_sd: f64,
    pub feature_means: [f64; 9],
    pub feature_sds: [f64; 9],
    /// Emit every `tracking_stride`-th frame (1 or 5); the last frame is always emitted.
    pub tracking_stride: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let loadings = [0.98, 0.97, 0.91];
        SynthConfig {
            n_subjects: 20,
            tasks: Task::RATED.to_vec(),
            n_raters: 6,
            rater_pool: None,
            intercepts: [0.0; 3],
            loadings,
            residual_vars: loadings.map(|l| 1.0 - l * l),
            feature_weights: [0.6, 0.1, 0.3, 0.4, 0.1, 0.2, 0.1, 0.5, 0.3],
            task_weights: Vec::new(),
            feature_noise_sd: 0.5,
            feature_means: [2.0, 0.0, 0.02, 1.5, 0.01, 0.012, 0.008, 5.0, 1.2],
            feature_sds: [0.5, 0.05, 0.006, 0.4, 0.003, 0.004, 0.0025, 2.0, 0.4],
            tracking_stride: 1,
            seed: 0,
        }
    }
}

/// Recording length used for each task, in seconds.
pub fn recording_seconds(task: Task) -> usize {
    match task {
        Task::Startle => 20,
        Task::Pain => 30,
        Task::Disgust => 16,
        Task::Sadness => 60,
        Task::Fear => 24,
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.into()));
        if self.n_subjects == 0 || self.tasks.is_empty() {
            return bad("need at least one subject and one task");
        }
        if self.n_raters < 2 {
            return bad("need at least two raters per clip");
        }
        if self.rater_pool.is_some_and(|p| p < self.n_raters) {
            return bad("rater pool smaller than raters per clip");
        }
        if self.residual_vars.iter().any(|&e| !(e >= 0.0)) || self.loadings.iter().chain(&self.intercepts).any(|v| !v.is_finite()) {
            return bad("residual variances must be non-negative and loadings finite");
        }
        if self.feature_sds.iter().any(|&s| !(s > 0.0)) || !(self.feature_noise_sd >= 0.0) {
            return bad("feature sds must be positive and noise sd non-negative");
        }
        for t in &self.tasks {
            if self.weights_for(*t).iter().map(|w| w * w).sum::<f64>() + self.feature_noise_sd.powi(2) <= 0.0 {
                return bad("latent score has zero variance");
            }
        }
        if ![1, 5].contains(&self.tracking_stride) {
            return bad("tracking_stride must be 1 or 5");
        }
        Ok(())
    }

    pub fn weights_for(&self, task: Task) -> [f64; 9] {
        self.task_weights.iter().find(|tw| tw.task == task).map_or(self.feature_weights, |tw| tw.weights)
    }

    pub fn clips_per_subject(&self) -> usize {
        self.tasks.iter().map(|t| t.windows().len()).sum()
    }

    fn subject_id(&self, i: usize) -> String {
        let width = self.n_subjects.to_string().len().max(3);
        format!("S{:0width$}", i + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthClip {
    pub clip: ClipId,
    pub eta: f64,
    pub features: ClipFeatures,
    /// Unrounded answers on the 0–4 scale, per rater.
    pub answers: Vec<(String, [f64; 3])>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub config: SynthConfig,
    pub clips: Vec<SynthClip>,
}

fn discretize(a: f64) -> u8 {
    a.clamp(0.0, MAX_ANSWER as f64).round() as u8
}

/// Clamps raw draws to values the renderer can realize.
fn realizable(mut x: [f64; 9]) -> [f64; 9] {
    x[0] = x[0].max(0.0);
    let vmax = x[0] / 6.5;
    x[1] = x[1].clamp(-vmax, vmax);
    for v in &mut x[2..7] {
        *v = v.max(0.0);
    }
    x[7] = x[7].round().clamp(0.0, INTENSITY_AUS.len() as f64);
    x[8] = if x[7] == 0.0 { 0.0 } else { x[8].clamp(0.0, 5.0) };
    x
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut clips = Vec::with_capacity(cfg.n_subjects * cfg.clips_per_subject());
    for s in 0..cfg.n_subjects {
        let subject = cfg.subject_id(s);
        for &task in &cfg.tasks {
            let w = cfg.weights_for(task);
            let scale = (w.iter().map(|v| v * v).sum::<f64>() + cfg.feature_noise_sd.powi(2)).sqrt();
            for window in task.windows() {
                let z: [f64; 9] = std::array::from_fn(|_| rng.sample(StandardNormal));
                let x = realizable(std::array::from_fn(|j| cfg.feature_means[j] + cfg.feature_sds[j] * z[j]));
                let e = cfg.feature_noise_sd * rng.sample::<f64, _>(StandardNormal);
                // From the draws rather than the clamped targets, so that var(η) = 1.
                let eta = ((0..9).map(|j| w[j] * z[j]).sum::<f64>() + e) / scale;

                let raters: Vec<usize> = match cfg.rater_pool {
                    Some(pool) => {
                        let mut v = index::sample(&mut rng, pool, cfg.n_raters).into_vec();
                        v.sort_unstable();
                        v
                    }
                    None => (0..cfg.n_raters).collect(),
                };
                let k = cfg.n_raters as f64;
                let answers = raters
                    .into_iter()
                    .map(|r| {
                        let a = std::array::from_fn(|q| {
                            let noise = (k * cfg.residual_vars[q]).sqrt() * rng.sample::<f64, _>(StandardNormal);
                            2.0 + cfg.intercepts[q] + cfg.loadings[q] * eta + noise
                        });
                        (format!("R{}", r + 1), a)
                    })
                    .collect();
                clips.push(SynthClip { clip: ClipId::new(subject.clone(), task, window), eta, features: ClipFeatures::from_array(x), answers });
            }
        }
    }
    Ok(SynthData { config: cfg.clone(), clips })
}

fn template_landmarks() -> Vec<[f64; 2]> {
    (0..LANDMARKS).map(|i| [280.0 + 6.0 * (i % 12) as f64, 220.0 + 9.0 * (i / 12) as f64]).collect()
}

impl SynthData {
    /// Rounded ratings as they would be collected.
    pub fn ratings(&self) -> Result<RatingsTable> {
        let rows = self
            .clips
            .iter()
            .flat_map(|c| c.answers.iter().map(|(r, a)| Rating { clip: c.clip.clone(), rater: r.clone(), answers: a.map(discretize) }))
            .collect();
        Ok(RatingsTable::from_rows(rows)?)
    }

    /// Unrounded per-clip mean answers, in clip order.
    pub fn continuous_means(&self) -> Vec<[f64; 3]> {
        self.clips
            .iter()
            .map(|c| std::array::from_fn(|q| c.answers.iter().map(|(_, a)| a[q]).sum::<f64>() / c.answers.len() as f64))
            .collect()
    }

    /// Unrounded clip-by-rater matrix for question `q`; requires a fixed rater set.
    pub fn continuous_matrix(&self, q: usize) -> Vec<Vec<f64>> {
        self.clips.iter().map(|c| c.answers.iter().map(|(_, a)| a[q]).collect()).collect()
    }

    pub fn subjects(&self) -> Vec<String> {
        (0..self.config.n_subjects).map(|i| self.config.subject_id(i)).collect()
    }

    /// Full tracking recording for one subject and task.
    pub fn tracking(&self, subject: &str, task: Task) -> Result<TrackingSequence> {
        let n = recording_seconds(task) * FPS as usize;
        let aus: Vec<AuChannel> = INTENSITY_AUS
            .iter()
            .map(|a| AuChannel { name: a.to_string(), has_intensity: true })
            .chain([AuChannel { name: "AU28".into(), has_intensity: false }])
            .collect();
        let base = template_landmarks();
        let still = |i: usize| {
            let mut f = Frame::padding(i, aus.len());
            f.valid = true;
            f.translation = [0.0, 0.0, 500.0];
            f.landmarks = base.clone();
            f
        };
        let mut frames: Vec<Frame> = (0..n).map(still).collect();

        for c in self.clips.iter().filter(|c| c.clip.subject == subject && c.clip.task == task) {
            let (start, _) = c.clip.window.frame_range(n).ok_or(IngestError::RecordingTooShort { task, frames: n })?;
            let x = c.features.to_array();
            let (d, v) = (x[0], x[1]);
            let step = |u: usize| d + v * (u as f64 - 7.5);
            // Cumulative shift at each 5 Hz step.
            let mut shift = vec![0.0; 15];
            for u in 1..15 {
                shift[u] = shift[u - 1] + step(u);
            }
            let n_active = x[7] as usize;
            for o in 0..CLIP_FRAMES {
                let tau = (o as f64 / 5.0).min(14.0);
                let lo = tau.floor() as usize;
                let px = if lo >= 14 { shift[14] } else { shift[lo] + (tau - lo as f64) * (shift[lo + 1] - shift[lo]) };
                let f = &mut frames[start + o];
                f.landmarks.iter_mut().for_each(|p| p[0] += px);
                f.gaze[0] = x[2] * tau;
                f.translation[2] = 500.0 - x[3] * tau;
                f.rotation = [x[4] * tau, x[5] * tau, x[6] * tau];
                for a in 0..n_active {
                    f.au_occurrence[a] = true;
                    f.au_intensity[a] = x[8];
                }
            }
        }
        let stride = self.config.tracking_stride;
        let frames = frames.into_iter().filter(|f| f.index % stride == 0 || f.index + 1 == n).collect();
        Ok(TrackingSequence::new(aus, frames)?)
    }

    /// Per-clip latent score and target features.
    pub fn write_truth<W: Write>(&self, out: W) -> io::Result<()> {
        let mut header = vec!["clip_id", "subject_id", "task", "eta"];
        header.extend(FEATURE_NAMES);
        report::write_csv(
            out,
            None,
            &header,
            self.clips.iter().map(|c| {
                let mut rec = vec![c.clip.to_string(), c.clip.subject.clone(), c.clip.task.to_string(), c.eta.to_string()];
                rec.extend(c.features.to_array().iter().map(f64::to_string));
                rec
            }),
        )
    }

    /// Writes `ratings.csv`, `truth.csv` and `tracking/{subject}_{task}.csv` under `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        let tracking_dir = dir.join("tracking");
        fs::create_dir_all(&tracking_dir)?;
        self.ratings()?.write_csv(io::BufWriter::new(fs::File::create(dir.join("ratings.csv"))?))?;
        self.write_truth(io::BufWriter::new(fs::File::create(dir.join("truth.csv"))?))?;
        for subject in self.subjects() {
            for &task in &self.config.tasks {
                let file = fs::File::create(tracking_dir.join(format!("{subject}_{task}.csv")))?;
                self.tracking(&subject, task)?.write_csv(io::BufWriter::new(file))?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::extract;
    use crate::ingest::segment_clips;
    use crate::psychometrics::icc_1k;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig { n_subjects: 3, seed, ..SynthConfig::default() }
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(generate(&small(4)).unwrap(), generate(&small(4)).unwrap());
        assert_ne!(generate(&small(4)).unwrap(), generate(&small(5)).unwrap());
    }

    #[test]
    fn clip_layout() {
        let data = generate(&small(1)).unwrap();
        assert_eq!(data.config.clips_per_subject(), 5 + 7 + 4);
        assert_eq!(data.clips.len(), 3 * 16);
        assert_eq!(data.subjects(), ["S001", "S002", "S003"]);
        assert!(data.clips.iter().all(|c| c.answers.len() == 6));
    }

    #[test]
    fn discretized_answers_in_range() {
        let cfg = SynthConfig { intercepts: [1.5, -1.5, 0.0], ..small(2) };
        let table = generate(&cfg).unwrap().ratings().unwrap();
        assert!(table.rows().iter().all(|r| r.answers.iter().all(|&a| a <= MAX_ANSWER)));
        assert_eq!(discretize(-0.7), 0);
        assert_eq!(discretize(2.49), 2);
        assert_eq!(discretize(9.0), 4);
    }

    #[test]
    fn noiseless_raters_agree() {
        let cfg = SynthConfig { residual_vars: [0.0; 3], ..small(3) };
        let data = generate(&cfg).unwrap();
        for q in 0..3 {
            let icc = icc_1k(&data.continuous_matrix(q), 0.95).unwrap();
            assert_eq!(icc.icc, 1.0);
        }
    }

    #[test]
    fn latent_score_is_standardized_linear_model() {
        // Displacement and head depth sit four sds above their clamps.
        let mut w = [0.0; 9];
        w[0] = 0.6;
        w[3] = 0.8;
        let cfg = SynthConfig { feature_noise_sd: 0.0, feature_weights: w, ..small(6) };
        let data = generate(&cfg).unwrap();
        for c in &data.clips {
            let x = c.features.to_array();
            let want = (0..9).map(|j| w[j] * (x[j] - cfg.feature_means[j]) / cfg.feature_sds[j]).sum::<f64>();
            assert!((c.eta - want).abs() < 1e-12);
        }
    }

    #[test]
    fn latent_score_has_unit_variance() {
        let cfg = SynthConfig { n_subjects: 2000, tasks: vec![Task::Fear], n_raters: 2, ..SynthConfig::default() };
        let eta: Vec<f64> = generate(&cfg).unwrap().clips.iter().map(|c| c.eta).collect();
        let n = eta.len() as f64;
        let m = eta.iter().sum::<f64>() / n;
        let v = eta.iter().map(|e| (e - m).powi(2)).sum::<f64>() / n;
        // 14000 draws: sds of the mean and variance are about 0.008 and 0.012.
        assert!(m.abs() < 0.03, "mean {m}");
        assert!((v - 1.0).abs() < 0.04, "variance {v}");
    }

    #[test]
    fn rater_pool_assignment() {
        let cfg = SynthConfig { rater_pool: Some(20), ..small(7) };
        let data = generate(&cfg).unwrap();
        let table = data.ratings().unwrap();
        let distinct: std::collections::BTreeSet<_> = table.rows().iter().map(|r| r.rater.clone()).collect();
        assert!(distinct.len() > 6 && distinct.len() <= 20);
        assert!(table.by_clip().values().all(|r| r.len() == 6));
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            SynthConfig { n_raters: 1, ..SynthConfig::default() },
            SynthConfig { rater_pool: Some(3), ..SynthConfig::default() },
            SynthConfig { residual_vars: [-0.1, 0.0, 0.0], ..SynthConfig::default() },
            SynthConfig { feature_weights: [0.0; 9], feature_noise_sd: 0.0, ..SynthConfig::default() },
            SynthConfig { tracking_stride: 3, ..SynthConfig::default() },
            SynthConfig { tasks: vec![], ..SynthConfig::default() },
        ] {
            assert!(matches!(generate(&cfg), Err(SynthError::InvalidConfig(_))));
        }
    }

    fn check_recovery(stride: usize) {
        let cfg = SynthConfig { n_subjects: 2, tracking_stride: stride, ..SynthConfig::default() };
        let data = generate(&cfg).unwrap();
        for subject in data.subjects() {
            for &task in &cfg.tasks {
                let mut buf = Vec::new();
                data.tracking(&subject, task).unwrap().write_csv(&mut buf).unwrap();
                let seq = crate::ingest::read_tracking(buf.as_slice()).unwrap();
                for (id, slice) in segment_clips(&seq, &subject, task).unwrap() {
                    let want = data.clips.iter().find(|c| c.clip == id).unwrap().features.to_array();
                    let got = extract(&slice).unwrap().to_array();
                    for j in 0..9 {
                        assert!((got[j] - want[j]).abs() <= 1e-9 * (1.0 + want[j].abs()), "{id} {}: {} vs {}", FEATURE_NAMES[j], got[j], want[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn rendered_tracking_reproduces_features() {
        check_recovery(1);
    }

    #[test]
    fn sparse_tracking_reproduces_features() {
        check_recovery(5);
    }

    #[test]
    fn written_files_are_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { n_subjects: 2, tracking_stride: 5, ..SynthConfig::default() };
        generate(&cfg).unwrap().write_dir(a.path()).unwrap();
        generate(&cfg).unwrap().write_dir(b.path()).unwrap();
        for rel in ["ratings.csv", "truth.csv", "tracking/S001_pain.csv", "tracking/S002_disgust.csv"] {
            assert_eq!(fs::read(a.path().join(rel)).unwrap(), fs::read(b.path().join(rel)).unwrap(), "{rel}");
        }
    }
}
