//! Annotation and tracking CSV ingestion, clip segmentation and frame padding.
//!
//! Tracking files follow the OpenFace 2.x CSV layout. The `frame` column is
//! 1-based as OpenFace writes it; internally frames are addressed by a 0-based
//! index so that frame `i` covers `[i / 25, (i + 1) / 25)` seconds.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

/// Tracking frame rate.
pub const FPS: u32 = 25;
/// Clip length in seconds.
pub const CLIP_SECONDS: u32 = 3;
/// Frame slots in every clip slice.
pub const CLIP_FRAMES: usize = (FPS * CLIP_SECONDS) as usize;
/// Number of 2-D landmarks in the OpenFace face model.
pub const LANDMARKS: usize = 68;
/// Highest answer on the rating scale.
pub const MAX_ANSWER: u8 = 4;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("line {line}: answer {value} to question {question} is outside 0..=4")]
    OutOfRangeAnswer { line: u64, question: usize, value: i64 },
    #[error("duplicate rating of clip {clip} by rater {rater}")]
    DuplicateRating { clip: String, rater: String },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("frame indices not strictly increasing at frame {0}")]
    NonMonotonicFrames(u64),
    #[error("recording of {frames} frames too short for the {task} windows")]
    RecordingTooShort { task: Task, frames: usize },
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = IngestError> = std::result::Result<T, E>;

/// Emotion elicitation task. Sadness and fear only take part in segmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Startle,
    Pain,
    Disgust,
    Sadness,
    Fear,
}

impl Task {
    /// Tasks that carry expressiveness annotations.
    pub const RATED: [Task; 3] = [Task::Startle, Task::Pain, Task::Disgust];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Startle => "startle",
            Task::Pain => "pain",
            Task::Disgust => "disgust",
            Task::Sadness => "sadness",
            Task::Fear => "fear",
        }
    }

    /// Capitalised name used in report headers.
    pub fn label(self) -> &'static str {
        match self {
            Task::Startle => "Startle",
            Task::Pain => "Pain",
            Task::Disgust => "Disgust",
            Task::Sadness => "Sadness",
            Task::Fear => "Fear",
        }
    }

    /// Sampled 3-second windows for the task.
    pub fn windows(self) -> Vec<Window> {
        let head = |pairs: &[(u32, u32)]| {
            pairs
                .iter()
                .map(|&(s, e)| Window::from_start(s, e))
                .collect::<Vec<_>>()
        };
        let tail = [(12, 9), (9, 6), (6, 3), (3, 0)].map(|(s, e)| Window::from_end(s, e));
        match self {
            Task::Startle => head(&[(3, 6), (6, 9), (9, 12), (12, 15), (15, 18)]),
            Task::Pain => {
                let mut w = head(&[(0, 3), (3, 6), (6, 9)]);
                w.extend(tail);
                w
            }
            Task::Disgust => head(&[(3, 6), (6, 9), (9, 12), (12, 15)]),
            Task::Sadness => {
                let mut w = head(&[(0, 3), (3, 6), (30, 33), (33, 36)]);
                w.extend(tail);
                w
            }
            Task::Fear => head(&[(0, 3), (3, 6), (6, 9), (9, 12), (12, 15), (15, 18), (18, 21)]),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "startle" => Ok(Task::Startle),
            "pain" => Ok(Task::Pain),
            "disgust" => Ok(Task::Disgust),
            "sadness" => Ok(Task::Sadness),
            "fear" => Ok(Task::Fear),
            _ => Err(IngestError::UnknownTask(s.to_string())),
        }
    }
}

/// A single task or the pooled set of all tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scope {
    Task(Task),
    All,
}

impl Scope {
    pub fn label(self) -> &'static str {
        match self {
            Scope::Task(t) => t.label(),
            Scope::All => "All",
        }
    }

    pub fn contains(self, task: Task) -> bool {
        match self {
            Scope::Task(t) => t == task,
            Scope::All => true,
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::Task(t) => t.fmt(f),
            Scope::All => f.write_str("all"),
        }
    }
}

impl FromStr for Scope {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("all") {
            Ok(Scope::All)
        } else {
            s.parse().map(Scope::Task)
        }
    }
}

/// A 3-second window. With `from_end` both offsets count back from the end
/// of the recording, so `[-12, -09]` is `from_end(12, 9)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Window {
    pub from_end: bool,
    start: u32,
    end: u32,
}

impl Window {
    pub fn from_start(start_s: u32, end_s: u32) -> Self {
        Window { from_end: false, start: start_s, end: end_s }
    }

    pub fn from_end(start_back_s: u32, end_back_s: u32) -> Self {
        Window { from_end: true, start: start_back_s, end: end_back_s }
    }

    /// Signed start second; negative for tail windows.
    pub fn start_s(&self) -> i32 {
        if self.from_end {
            -(self.start as i32)
        } else {
            self.start as i32
        }
    }

    /// Signed end second; `-0` is reported as `0` with `from_end` set.
    pub fn end_s(&self) -> i32 {
        if self.from_end {
            -(self.end as i32)
        } else {
            self.end as i32
        }
    }

    /// First frame and one-past-last frame in a recording of `n_frames`.
    pub fn frame_range(&self, n_frames: usize) -> Option<(usize, usize)> {
        let to_frames = |s: u32| (s * FPS) as usize;
        if self.from_end {
            let start = n_frames.checked_sub(to_frames(self.start))?;
            let end = n_frames.checked_sub(to_frames(self.end))?;
            Some((start, end))
        } else {
            let (start, end) = (to_frames(self.start), to_frames(self.end));
            (end <= n_frames).then_some((start, end))
        }
    }
}

// Chronological: head windows first, then tail windows.
impl Ord for Window {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.from_end, self.start_s(), self.end_s()).cmp(&(other.from_end, other.start_s(), other.end_s()))
    }
}

impl PartialOrd for Window {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = if self.from_end { "m" } else { "" };
        write!(f, "{p}{:02}-{p}{:02}", self.start, self.end)
    }
}

impl FromStr for Window {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (a, b) = s.split_once('-').ok_or_else(|| format!("bad window `{s}`"))?;
        let parse = |t: &str| -> std::result::Result<(bool, u32), String> {
            let (neg, digits) = match t.strip_prefix('m') {
                Some(rest) => (true, rest),
                None => (false, t),
            };
            digits
                .parse::<u32>()
                .map(|v| (neg, v))
                .map_err(|_| format!("bad window `{s}`"))
        };
        let (na, a) = parse(a)?;
        let (nb, b) = parse(b)?;
        if na != nb {
            return Err(format!("window `{s}` mixes start and end anchors"));
        }
        let w = Window { from_end: na, start: a, end: b };
        if w.end_s() - w.start_s() != CLIP_SECONDS as i32 {
            return Err(format!("window `{s}` is not {CLIP_SECONDS} seconds long"));
        }
        Ok(w)
    }
}

/// Identifies one clip: `{subject}_{task}_{window}`, e.g. `S001_startle_03-06`
/// or `S001_pain_m12-m09`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClipId {
    pub subject: String,
    pub task: Task,
    pub window: Window,
}

impl ClipId {
    pub fn new(subject: impl Into<String>, task: Task, window: Window) -> Self {
        ClipId { subject: subject.into(), task, window }
    }
}

impl fmt::Display for ClipId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}_{}", self.subject, self.task, self.window)
    }
}

impl FromStr for ClipId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let mut parts = s.rsplitn(3, '_');
        let window = parts.next().ok_or("empty clip id")?;
        let task = parts.next().ok_or_else(|| format!("clip id `{s}` lacks a task"))?;
        let subject = parts.next().ok_or_else(|| format!("clip id `{s}` lacks a subject"))?;
        if subject.is_empty() {
            return Err(format!("clip id `{s}` lacks a subject"));
        }
        let task = task.parse::<Task>().map_err(|e| e.to_string())?;
        Ok(ClipId { subject: subject.to_string(), task, window: window.parse()? })
    }
}

/// One rater's answers to the three expressiveness questions for one clip.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rating {
    pub clip: ClipId,
    pub rater: String,
    pub answers: [u8; 3],
}

/// Validated ratings, kept in canonical (clip, rater) order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RatingsTable {
    rows: Vec<Rating>,
}

pub const RATINGS_HEADER: [&str; 7] = ["clip_id", "subject_id", "task", "rater_id", "q1", "q2", "q3"];

impl RatingsTable {
    pub fn from_rows(mut rows: Vec<Rating>) -> Result<Self> {
        rows.sort_by(|a, b| (&a.clip, &a.rater).cmp(&(&b.clip, &b.rater)));
        for pair in rows.windows(2) {
            if pair[0].clip == pair[1].clip && pair[0].rater == pair[1].rater {
                return Err(IngestError::DuplicateRating {
                    clip: pair[0].clip.to_string(),
                    rater: pair[0].rater.clone(),
                });
            }
        }
        for r in &rows {
            if let Some(q) = r.answers.iter().position(|&q| q > MAX_ANSWER) {
                return Err(IngestError::OutOfRangeAnswer { line: 0, question: q + 1, value: r.answers[q] as i64 });
            }
        }
        Ok(RatingsTable { rows })
    }

    pub fn rows(&self) -> &[Rating] {
        &self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Ratings grouped by clip, in clip order.
    pub fn by_clip(&self) -> BTreeMap<&ClipId, Vec<&Rating>> {
        let mut map: BTreeMap<&ClipId, Vec<&Rating>> = BTreeMap::new();
        for r in &self.rows {
            map.entry(&r.clip).or_default().push(r);
        }
        map
    }

    /// Keeps rows whose clip satisfies `keep`.
    pub fn filter(&self, keep: impl Fn(&ClipId) -> bool) -> RatingsTable {
        RatingsTable { rows: self.rows.iter().filter(|r| keep(&r.clip)).cloned().collect() }
    }

    pub fn tasks(&self) -> BTreeSet<Task> {
        self.rows.iter().map(|r| r.clip.task).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(RATINGS_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.clip.to_string(),
                r.clip.subject.clone(),
                r.clip.task.to_string(),
                r.rater.clone(),
                r.answers[0].to_string(),
                r.answers[1].to_string(),
                r.answers[2].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads a ratings CSV with header `clip_id,subject_id,task,rater_id,q1,q2,q3`.
pub fn parse_ratings(path: &Path) -> Result<RatingsTable> {
    read_ratings(std::fs::File::open(path)?)
}

pub fn read_ratings<R: Read>(input: R) -> Result<RatingsTable> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(input);
    let header = reader.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != RATINGS_HEADER {
        return Err(IngestError::MalformedRow {
            line: 1,
            reason: format!("expected header {}", RATINGS_HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    let mut seen: HashMap<(ClipId, String), ()> = HashMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |reason: String| IngestError::MalformedRow { line, reason };
        if record.len() != RATINGS_HEADER.len() {
            return Err(bad(format!("expected 7 columns, found {}", record.len())));
        }
        let clip: ClipId = record[0].parse().map_err(bad)?;
        if clip.subject != record[1] {
            return Err(bad(format!("subject `{}` does not match clip id `{}`", &record[1], clip)));
        }
        let task: Task = record[2].parse().map_err(|e: IngestError| bad(e.to_string()))?;
        if task != clip.task {
            return Err(bad(format!("task `{}` does not match clip id `{}`", &record[2], clip)));
        }
        let rater = record[3].to_string();
        if rater.is_empty() {
            return Err(bad("empty rater id".into()));
        }
        let mut answers = [0u8; 3];
        for (q, slot) in answers.iter_mut().enumerate() {
            let field = &record[4 + q];
            let value: i64 = field
                .parse()
                .map_err(|_| bad(format!("q{} is not an integer: `{field}`", q + 1)))?;
            if !(0..=MAX_ANSWER as i64).contains(&value) {
                return Err(IngestError::OutOfRangeAnswer { line, question: q + 1, value });
            }
            *slot = value as u8;
        }
        if seen.insert((clip.clone(), rater.clone()), ()).is_some() {
            return Err(IngestError::DuplicateRating { clip: clip.to_string(), rater });
        }
        rows.push(Rating { clip, rater, answers });
    }
    RatingsTable::from_rows(rows)
}

/// Action unit channel layout shared by every frame of a sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuChannel {
    /// e.g. `AU12`
    pub name: String,
    pub has_intensity: bool,
}

/// One tracked frame. `index` is 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: usize,
    pub timestamp: f64,
    pub valid: bool,
    pub gaze: [f64; 2],
    pub translation: [f64; 3],
    /// pitch (Rx), yaw (Ry), roll (Rz)
    pub rotation: [f64; 3],
    pub landmarks: Vec<[f64; 2]>,
    /// Intensity per AU channel; 0 where the channel has no intensity column.
    pub au_intensity: Vec<f64>,
    pub au_occurrence: Vec<bool>,
}

impl Frame {
    /// Placeholder for a dropped frame: invalid, every channel zeroed.
    pub fn padding(index: usize, n_aus: usize) -> Self {
        Frame {
            index,
            timestamp: index as f64 / FPS as f64,
            valid: false,
            gaze: [0.0; 2],
            translation: [0.0; 3],
            rotation: [0.0; 3],
            landmarks: vec![[0.0; 2]; LANDMARKS],
            au_intensity: vec![0.0; n_aus],
            au_occurrence: vec![false; n_aus],
        }
    }
}

/// A per-frame tracking recording at 25 Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingSequence {
    pub aus: Vec<AuChannel>,
    pub frames: Vec<Frame>,
}

impl TrackingSequence {
    pub fn new(aus: Vec<AuChannel>, frames: Vec<Frame>) -> Result<Self> {
        for pair in frames.windows(2) {
            if pair[1].index <= pair[0].index {
                return Err(IngestError::NonMonotonicFrames(pair[1].index as u64 + 1));
            }
        }
        Ok(TrackingSequence { aus, frames })
    }

    /// Recording length in whole frames, taken from the highest frame index.
    pub fn n_frames(&self) -> usize {
        self.frames.last().map_or(0, |f| f.index + 1)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(tracking_header(&self.aus))?;
        for f in &self.frames {
            let mut rec: Vec<String> = Vec::with_capacity(16 + 2 * LANDMARKS + 2 * self.aus.len());
            rec.push((f.index + 1).to_string());
            rec.push(f.timestamp.to_string());
            rec.push(if f.valid { "1" } else { "0" }.into());
            rec.extend(f.gaze.iter().map(f64::to_string));
            rec.extend(f.translation.iter().map(f64::to_string));
            rec.extend(f.rotation.iter().map(f64::to_string));
            rec.extend(f.landmarks.iter().map(|p| p[0].to_string()));
            rec.extend(f.landmarks.iter().map(|p| p[1].to_string()));
            for (i, au) in self.aus.iter().enumerate() {
                if au.has_intensity {
                    rec.push(f.au_intensity[i].to_string());
                }
            }
            rec.extend(f.au_occurrence.iter().map(|&o| if o { "1" } else { "0" }.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn tracking_header(aus: &[AuChannel]) -> Vec<String> {
    let mut h: Vec<String> = ["frame", "timestamp", "success", "gaze_angle_x", "gaze_angle_y"]
        .iter()
        .chain(&["pose_Tx", "pose_Ty", "pose_Tz", "pose_Rx", "pose_Ry", "pose_Rz"])
        .map(|s| s.to_string())
        .collect();
    h.extend((0..LANDMARKS).map(|i| format!("x_{i}")));
    h.extend((0..LANDMARKS).map(|i| format!("y_{i}")));
    h.extend(aus.iter().filter(|a| a.has_intensity).map(|a| format!("{}_r", a.name)));
    h.extend(aus.iter().map(|a| format!("{}_c", a.name)));
    h
}

pub fn parse_tracking(path: &Path) -> Result<TrackingSequence> {
    read_tracking(std::fs::File::open(path)?)
}

/// Reads an OpenFace-style tracking CSV. Header names and fields are trimmed;
/// a `success` column, when present, sets the validity flag. AU channels are
/// the `AUxx_c` occurrence columns, paired with `AUxx_r` where available.
pub fn read_tracking<R: Read>(input: R) -> Result<TrackingSequence> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let pos: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();
    let col = |name: &str| pos.get(name).copied().ok_or_else(|| IngestError::MissingColumn(name.into()));

    let frame_col = col("frame")?;
    let time_col = col("timestamp")?;
    let success_col = pos.get("success").copied();
    let gaze = [col("gaze_angle_x")?, col("gaze_angle_y")?];
    let trans = [col("pose_Tx")?, col("pose_Ty")?, col("pose_Tz")?];
    let rot = [col("pose_Rx")?, col("pose_Ry")?, col("pose_Rz")?];
    let lx = (0..LANDMARKS).map(|i| col(&format!("x_{i}"))).collect::<Result<Vec<_>>>()?;
    let ly = (0..LANDMARKS).map(|i| col(&format!("y_{i}"))).collect::<Result<Vec<_>>>()?;

    let mut aus = Vec::new();
    let mut au_cols = Vec::new();
    for (i, h) in header.iter().enumerate() {
        if let Some(name) = h.strip_suffix("_c").filter(|n| n.starts_with("AU")) {
            let r = pos.get(format!("{name}_r").as_str()).copied();
            aus.push(AuChannel { name: name.to_string(), has_intensity: r.is_some() });
            au_cols.push((r, i));
        }
    }

    let mut frames = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let num = |i: usize| -> Result<f64> {
            let field = record.get(i).ok_or_else(|| IngestError::MalformedRow {
                line,
                reason: format!("missing column {}", header[i]),
            })?;
            field.parse::<f64>().map_err(|_| IngestError::MalformedRow {
                line,
                reason: format!("column {} is not a number: `{field}`", header[i]),
            })
        };
        let frame_no = num(frame_col)?;
        if frame_no < 1.0 || frame_no.fract() != 0.0 {
            return Err(IngestError::MalformedRow { line, reason: format!("bad frame number {frame_no}") });
        }
        let valid = match success_col {
            Some(c) => num(c)? != 0.0,
            None => true,
        };
        let mut landmarks = Vec::with_capacity(LANDMARKS);
        for (&cx, &cy) in lx.iter().zip(&ly) {
            landmarks.push([num(cx)?, num(cy)?]);
        }
        let mut au_intensity = Vec::with_capacity(aus.len());
        let mut au_occurrence = Vec::with_capacity(aus.len());
        for &(r, c) in &au_cols {
            au_intensity.push(match r {
                Some(r) => num(r)?,
                None => 0.0,
            });
            let occ = num(c)?;
            if occ != 0.0 && occ != 1.0 {
                return Err(IngestError::MalformedRow {
                    line,
                    reason: format!("occurrence column {} must be 0 or 1, found {occ}", header[c]),
                });
            }
            au_occurrence.push(occ == 1.0);
        }
        frames.push(Frame {
            index: frame_no as usize - 1,
            timestamp: num(time_col)?,
            valid,
            gaze: [num(gaze[0])?, num(gaze[1])?],
            translation: [num(trans[0])?, num(trans[1])?, num(trans[2])?],
            rotation: [num(rot[0])?, num(rot[1])?, num(rot[2])?],
            landmarks,
            au_intensity,
            au_occurrence,
        });
    }
    TrackingSequence::new(aus, frames)
}

/// Frames of one clip window, addressed by absolute frame index.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipSlice {
    pub start_frame: usize,
    pub aus: Vec<AuChannel>,
    pub frames: Vec<Frame>,
}

impl ClipSlice {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Cuts the task's windows out of a recording and pads each to 75 frames.
pub fn segment_clips(seq: &TrackingSequence, subject: &str, task: Task) -> Result<Vec<(ClipId, ClipSlice)>> {
    let n = seq.n_frames();
    let windows = task.windows();
    let mut ranges = Vec::with_capacity(windows.len());
    for w in &windows {
        let range = w.frame_range(n).ok_or(IngestError::RecordingTooShort { task, frames: n })?;
        ranges.push(range);
    }
    let mut sorted = ranges.clone();
    sorted.sort_unstable();
    if sorted.windows(2).any(|p| p[1].0 < p[0].1) {
        return Err(IngestError::RecordingTooShort { task, frames: n });
    }

    Ok(windows
        .into_iter()
        .zip(ranges)
        .map(|(w, (start, end))| {
            let lo = seq.frames.partition_point(|f| f.index < start);
            let hi = seq.frames.partition_point(|f| f.index < end);
            let slice = ClipSlice { start_frame: start, aus: seq.aus.clone(), frames: seq.frames[lo..hi].to_vec() };
            (ClipId::new(subject, task, w), pad_missing_frames(slice))
        })
        .collect())
}

/// Fills every missing frame slot in `[start_frame, start_frame + 75)` with an
/// invalid, zeroed frame. Frames outside that range are dropped.
pub fn pad_missing_frames(slice: ClipSlice) -> ClipSlice {
    let ClipSlice { start_frame, aus, frames } = slice;
    let mut present = frames.into_iter().filter(|f| (start_frame..start_frame + CLIP_FRAMES).contains(&f.index)).peekable();
    let padded = (start_frame..start_frame + CLIP_FRAMES)
        .map(|idx| match present.next_if(|f| f.index == idx) {
            Some(f) => f,
            None => Frame::padding(idx, aus.len()),
        })
        .collect();
    ClipSlice { start_frame, aus, frames: padded }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "clip_id,subject_id,task,rater_id,q1,q2,q3\n";

    fn still_sequence(n_frames: usize) -> TrackingSequence {
        let frames = (0..n_frames)
            .map(|i| {
                let mut f = Frame::padding(i, 1);
                f.valid = true;
                f
            })
            .collect();
        TrackingSequence::new(vec![AuChannel { name: "AU12".into(), has_intensity: true }], frames).unwrap()
    }

    #[test]
    fn parses_schema_example() {
        let csv = format!("{HEADER}S001_startle_03-06,S001,startle,R1,2,3,1\n");
        let table = read_ratings(csv.as_bytes()).unwrap();
        assert_eq!(table.rows().len(), 1);
        let r = &table.rows()[0];
        assert_eq!(r.clip, ClipId::new("S001", Task::Startle, Window::from_start(3, 6)));
        assert_eq!(r.rater, "R1");
        assert_eq!(r.answers, [2, 3, 1]);
    }

    #[test]
    fn rejects_answer_five() {
        let csv = format!("{HEADER}S001_startle_03-06,S001,startle,R1,5,3,1\n");
        match read_ratings(csv.as_bytes()) {
            Err(IngestError::OutOfRangeAnswer { question: 1, value: 5, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_duplicate_rating() {
        let csv = format!("{HEADER}S001_startle_03-06,S001,startle,R1,2,3,1\nS001_startle_03-06,S001,startle,R1,1,1,1\n");
        assert!(matches!(read_ratings(csv.as_bytes()), Err(IngestError::DuplicateRating { .. })));
    }

    #[test]
    fn rejects_malformed_rows() {
        for body in [
            "S001_startle_03-06,S001,startle,R1,2,3\n",
            "S001_startle_03-06,S001,startle,R1,2,x,1\n",
            "S001_startle_03-06,S002,startle,R1,2,3,1\n",
            "S001_startle_03-07,S001,startle,R1,2,3,1\n",
        ] {
            let csv = format!("{HEADER}{body}");
            assert!(matches!(read_ratings(csv.as_bytes()), Err(IngestError::MalformedRow { .. })), "{body}");
        }
    }

    #[test]
    fn tail_window_ids_round_trip() {
        let id: ClipId = "S_01_pain_m12-m09".parse().unwrap();
        assert_eq!(id.subject, "S_01");
        assert_eq!(id.window.start_s(), -12);
        assert_eq!(id.window.end_s(), -9);
        assert_eq!(id.to_string(), "S_01_pain_m12-m09");
    }

    #[test]
    fn disgust_sixty_seconds() {
        let clips = segment_clips(&still_sequence(60 * 25), "S1", Task::Disgust).unwrap();
        let starts: Vec<_> = clips.iter().map(|(_, s)| s.start_frame).collect();
        assert_eq!(starts, vec![75, 150, 225, 300]);
    }

    #[test]
    fn startle_eighteen_seconds() {
        let clips = segment_clips(&still_sequence(18 * 25), "S1", Task::Startle).unwrap();
        assert_eq!(clips.len(), 5);
        let last = &clips[4].1;
        assert_eq!(last.frames.first().unwrap().index, 375);
        assert_eq!(last.frames.last().unwrap().index, 449);
    }

    #[test]
    fn pain_ten_seconds_is_too_short() {
        // Oracle: head windows cover frames 0..225, tail windows need 300
        // frames before the end; enumerate frame sets and look for overlap.
        let n = 250usize;
        let mut used = vec![0u8; n];
        let mut fits = true;
        for w in Task::Pain.windows() {
            match w.frame_range(n) {
                Some((a, b)) => (a..b).for_each(|i| used[i] += 1),
                None => fits = false,
            }
        }
        assert!(!fits || used.iter().any(|&c| c > 1));
        assert!(matches!(
            segment_clips(&still_sequence(n), "S1", Task::Pain),
            Err(IngestError::RecordingTooShort { .. })
        ));
    }

    #[test]
    fn pain_tail_windows_resolve_from_end() {
        let clips = segment_clips(&still_sequence(40 * 25), "S1", Task::Pain).unwrap();
        let starts: Vec<_> = clips.iter().map(|(_, s)| s.start_frame).collect();
        assert_eq!(starts, vec![0, 75, 150, 700, 775, 850, 925]);
    }

    #[test]
    fn pads_single_missing_frame() {
        let mut seq = still_sequence(75);
        seq.frames.remove(40);
        let slice = ClipSlice { start_frame: 0, aus: seq.aus.clone(), frames: seq.frames };
        let padded = pad_missing_frames(slice);
        assert_eq!(padded.len(), 75);
        assert_eq!(padded.frames[40], Frame::padding(40, 1));
        assert_eq!(padded.frames.iter().filter(|f| f.valid).count(), 74);
    }

    #[test]
    fn complete_slice_unchanged() {
        let seq = still_sequence(75);
        let slice = ClipSlice { start_frame: 0, aus: seq.aus.clone(), frames: seq.frames };
        assert_eq!(pad_missing_frames(slice.clone()), slice);
    }

    #[test]
    fn pads_leading_frames() {
        let seq = still_sequence(75);
        let slice = ClipSlice { start_frame: 0, aus: seq.aus.clone(), frames: seq.frames[5..].to_vec() };
        let padded = pad_missing_frames(slice);
        assert!(padded.frames[..5].iter().all(|f| !f.valid));
        assert_eq!(padded.frames.iter().filter(|f| f.valid).count(), 70);
    }

    #[test]
    fn tracking_csv_round_trip() {
        let mut seq = still_sequence(5);
        seq.frames[2].landmarks[10] = [1.5, -2.25];
        seq.frames[3].au_occurrence[0] = true;
        seq.frames[3].au_intensity[0] = 2.5;
        seq.frames.remove(1);
        let mut buf = Vec::new();
        seq.write_csv(&mut buf).unwrap();
        let back = read_tracking(buf.as_slice()).unwrap();
        assert_eq!(back, seq);
        assert_eq!(back.n_frames(), 5);
    }

    #[test]
    fn openface_header_with_spaces() {
        let seq = still_sequence(2);
        let mut buf = Vec::new();
        seq.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replace(',', ", ");
        let back = read_tracking(text.as_bytes()).unwrap();
        assert_eq!(back.frames.len(), 2);
        assert_eq!(back.aus[0].name, "AU12");
    }

    #[test]
    fn missing_tracking_column() {
        let csv = "frame,timestamp\n1,0.0\n";
        assert!(matches!(read_tracking(csv.as_bytes()), Err(IngestError::MissingColumn(_))));
    }
}
