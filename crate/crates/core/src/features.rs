//! Clip-level kinematic and action-unit features.
//!
//! Motion features use the 5 Hz stream (every fifth frame of the 75-frame
//! slice); AU aggregates use all 75 frames. A step between two downsampled
//! frames counts only when both frames are valid.

use std::io::{Read, Write};

use thiserror::Error;

use crate::ingest::{ClipId, ClipSlice, Frame, Task, CLIP_FRAMES};
use crate::report;

/// Downsampling stride from 25 Hz to 5 Hz.
pub const STRIDE: usize = 5;
/// Frames per clip at 5 Hz.
pub const DOWNSAMPLED_FRAMES: usize = CLIP_FRAMES / STRIDE;
/// Minimum valid frames in the 5 Hz stream.
pub const MIN_VALID_FRAMES: usize = 3;

pub const FEATURE_NAMES: [&str; 9] = [
    "points_displacement",
    "points_velocity",
    "gaze_delta",
    "head_displacement",
    "pitch_delta",
    "yaw_delta",
    "roll_delta",
    "au_count",
    "au_intensity",
];

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("{found} valid frames at 5 Hz with {steps} usable steps; need {MIN_VALID_FRAMES} frames and one step")]
    TooFewValidFrames { found: usize, steps: usize },
    #[error("expected {expected} frames, got {found}")]
    WrongLength { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClipFeatures {
    pub points_displacement: f64,
    pub points_velocity: f64,
    pub gaze_delta: f64,
    pub head_displacement: f64,
    pub pitch_delta: f64,
    pub yaw_delta: f64,
    pub roll_delta: f64,
    pub au_count: f64,
    pub au_intensity: f64,
}

impl ClipFeatures {
    pub fn to_array(&self) -> [f64; 9] {
        [
            self.points_displacement,
            self.points_velocity,
            self.gaze_delta,
            self.head_displacement,
            self.pitch_delta,
            self.yaw_delta,
            self.roll_delta,
            self.au_count,
            self.au_intensity,
        ]
    }

    pub fn from_array(a: [f64; 9]) -> Self {
        ClipFeatures {
            points_displacement: a[0],
            points_velocity: a[1],
            gaze_delta: a[2],
            head_displacement: a[3],
            pitch_delta: a[4],
            yaw_delta: a[5],
            roll_delta: a[6],
            au_count: a[7],
            au_intensity: a[8],
        }
    }
}

/// Keeps frames 0, 5, ..., 70.
pub fn downsample(frames: &[Frame]) -> Result<Vec<&Frame>, FeatureError> {
    if frames.len() != CLIP_FRAMES {
        return Err(FeatureError::WrongLength { expected: CLIP_FRAMES, found: frames.len() });
    }
    Ok(frames.iter().step_by(STRIDE).collect())
}

/// Per-step values over consecutive frame pairs; `None` where the step
/// touches an invalid frame.
fn steps<'a>(frames: &'a [&'a Frame], f: impl Fn(&Frame, &Frame) -> f64 + 'a) -> impl Iterator<Item = Option<f64>> + 'a {
    frames.windows(2).map(move |w| (w[0].valid && w[1].valid).then(|| f(w[0], w[1])))
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn check_valid(frames: &[&Frame]) -> Result<(), FeatureError> {
    let found = frames.iter().filter(|f| f.valid).count();
    let steps = frames.windows(2).filter(|w| w[0].valid && w[1].valid).count();
    if found < MIN_VALID_FRAMES || steps == 0 {
        return Err(FeatureError::TooFewValidFrames { found, steps });
    }
    Ok(())
}

fn euclid<const N: usize>(a: &[f64; N], b: &[f64; N]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// `(points_displacement, points_velocity)` from a downsampled stream.
///
/// `d(t)` is the mean landmark distance moved between steps `t - 1` and `t`;
/// velocity is the mean of `d(t) - d(t - 1)` over adjacent usable steps.
pub fn point_kinematics(frames: &[&Frame]) -> Result<(f64, f64), FeatureError> {
    check_valid(frames)?;
    let d: Vec<Option<f64>> = steps(frames, |a, b| {
        a.landmarks.iter().zip(&b.landmarks).map(|(p, q)| euclid(p, q)).sum::<f64>() / a.landmarks.len() as f64
    })
    .collect();
    let displacement = mean_defined(d.iter().copied()).unwrap_or(0.0);
    let velocity = mean_defined(d.windows(2).map(|w| Some(w[1]? - w[0]?))).unwrap_or(0.0);
    Ok((displacement, velocity))
}

/// `(gaze_delta, head_displacement, pitch_delta, yaw_delta, roll_delta)`.
pub fn pose_gaze_deltas(frames: &[&Frame]) -> Result<(f64, f64, f64, f64, f64), FeatureError> {
    check_valid(frames)?;
    let mean = |f: &dyn Fn(&Frame, &Frame) -> f64| mean_defined(steps(frames, f)).unwrap_or(0.0);
    Ok((
        mean(&|a, b| euclid(&a.gaze, &b.gaze)),
        mean(&|a, b| euclid(&a.translation, &b.translation)),
        mean(&|a, b| (a.rotation[0] - b.rotation[0]).abs()),
        mean(&|a, b| (a.rotation[1] - b.rotation[1]).abs()),
        mean(&|a, b| (a.rotation[2] - b.rotation[2]).abs()),
    ))
}

/// `(au_count, au_intensity)` over all valid frames of the slice.
///
/// The count is the number of distinct AU channels occurring in at least one
/// valid frame; the intensity is the mean over occurring (frame, AU) cells
/// that carry an intensity channel, or 0 when nothing occurs.
pub fn au_aggregates(slice: &ClipSlice) -> (f64, f64) {
    let n_aus = slice.aus.len();
    let mut seen = vec![false; n_aus];
    let (mut sum, mut cells) = (0.0, 0usize);
    for f in slice.frames.iter().filter(|f| f.valid) {
        for a in 0..n_aus {
            if f.au_occurrence[a] {
                seen[a] = true;
                if slice.aus[a].has_intensity {
                    sum += f.au_intensity[a];
                    cells += 1;
                }
            }
        }
    }
    let count = seen.iter().filter(|&&s| s).count() as f64;
    (count, if cells > 0 { sum / cells as f64 } else { 0.0 })
}

/// All nine features for a padded 75-frame slice.
pub fn extract(slice: &ClipSlice) -> Result<ClipFeatures, FeatureError> {
    let stream = downsample(&slice.frames)?;
    let (points_displacement, points_velocity) = point_kinematics(&stream)?;
    let (gaze_delta, head_displacement, pitch_delta, yaw_delta, roll_delta) = pose_gaze_deltas(&stream)?;
    let (au_count, au_intensity) = au_aggregates(slice);
    Ok(ClipFeatures {
        points_displacement,
        points_velocity,
        gaze_delta,
        head_displacement,
        pitch_delta,
        yaw_delta,
        roll_delta,
        au_count,
        au_intensity,
    })
}

/// One row of the feature matrix file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub clip: ClipId,
    pub features: ClipFeatures,
    /// Score from the task's own CFA fit.
    pub score_task: f64,
    /// Score from the all-tasks CFA fit.
    pub score_all: f64,
}

impl FeatureRow {
    pub fn task(&self) -> Task {
        self.clip.task
    }
}

pub fn feature_header() -> Vec<&'static str> {
    let mut h = vec!["clip_id", "subject_id", "task"];
    h.extend(FEATURE_NAMES);
    h.extend(["score_task", "score_all"]);
    h
}

/// Writes rows at full precision so later stages see exactly these values.
pub fn write_feature_csv<W: Write>(out: W, rows: &[FeatureRow], provenance: Option<&report::Provenance>) -> std::io::Result<()> {
    report::write_csv(
        out,
        provenance,
        &feature_header(),
        rows.iter().map(|r| {
            let mut rec = vec![r.clip.to_string(), r.clip.subject.clone(), r.clip.task.to_string()];
            rec.extend(r.features.to_array().iter().map(f64::to_string));
            rec.push(r.score_task.to_string());
            rec.push(r.score_all.to_string());
            rec
        }),
    )
}

pub fn read_feature_csv<R: Read>(input: R) -> Result<Vec<FeatureRow>, String> {
    let mut reader = report::reader(input);
    let header = reader.headers().map_err(|e| e.to_string())?.clone();
    if header.iter().collect::<Vec<_>>() != feature_header() {
        return Err(format!("expected header {}", feature_header().join(",")));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let clip: ClipId = rec[0].parse()?;
        let num = |i: usize| rec[i].parse::<f64>().map_err(|_| format!("clip {}: bad number `{}`", &rec[0], &rec[i]));
        let mut f = [0.0; 9];
        for (j, slot) in f.iter_mut().enumerate() {
            *slot = num(3 + j)?;
        }
        rows.push(FeatureRow { clip, features: ClipFeatures::from_array(f), score_task: num(12)?, score_all: num(13)? });
    }
    Ok(rows)
}
