//! Recordings, segmentation and raw per-frame features.
//!
//! A [`Recording`] is one pre-tracked, pre-aligned take: joint positions,
//! mono audio and word timings on a shared clock. [`segment_recording`] cuts it
//! into windows of `s` seconds that overlap by `s/2`, and
//! [`compute_raw_features`] derives the per-frame matrices the embedding stage
//! consumes.

pub mod audio;
pub mod io;
pub mod spectrogram;
pub mod synthetic;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use audio::{AudioEncoder, AudioTrack, ReferenceAudioEncoder, TARGET_SAMPLE_RATE};
pub use spectrogram::{pool_bands, spectrogram, Stft};

use crate::error::{Error, Result};

/// Default segment length in seconds.
pub const DEFAULT_SEGMENT_SECONDS: f64 = 2.0;
/// Number of derivative orders stacked into the motion derivative matrix.
pub const DERIVATIVE_ORDERS: usize = 6;
/// Segments whose mean tracking confidence falls below this are dropped.
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.5;
/// Segments whose mean per-joint frame-to-frame displacement falls below this are dropped.
pub const DEFAULT_MOVEMENT_THRESHOLD: f64 = 1e-4;

/// One frame of joint positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose(pub Vec<[f64; 3]>);

impl Pose {
    pub fn joints(&self) -> usize {
        self.0.len()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }
}

/// Packs poses into a `frames × (joints·3)` matrix.
pub fn poses_to_matrix(poses: &[Pose]) -> Result<DMatrix<f64>> {
    let joints = poses.first().map(Pose::joints).ok_or(Error::Empty("pose sequence"))?;
    let mut m = DMatrix::zeros(poses.len(), joints * 3);
    for (f, pose) in poses.iter().enumerate() {
        if pose.joints() != joints {
            return Err(Error::DimensionMismatch {
                context: "pose joint count",
                expected: joints,
                actual: pose.joints(),
            });
        }
        if !pose.is_finite() {
            return Err(Error::InvalidInput(format!("frame {f} has non-finite coordinates")));
        }
        for (j, p) in pose.0.iter().enumerate() {
            for c in 0..3 {
                m[(f, j * 3 + c)] = p[c];
            }
        }
    }
    Ok(m)
}

pub fn matrix_row_to_pose(m: &DMatrix<f64>, row: usize) -> Pose {
    let joints = m.ncols() / 3;
    Pose(
        (0..joints)
            .map(|j| [m[(row, j * 3)], m[(row, j * 3 + 1)], m[(row, j * 3 + 2)]])
            .collect(),
    )
}

/// A contiguous run of frames cut from a recording.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionClip {
    pub id: String,
    pub source_id: String,
    pub start_frame: usize,
    pub fps: f64,
    /// `frames × (joints·3)`.
    pub frames: DMatrix<f64>,
}

impl MotionClip {
    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn joints(&self) -> usize {
        self.frames.ncols() / 3
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.fps
    }
}

/// A word with inclusive frame bounds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordTiming {
    pub word: String,
    pub start_frame: usize,
    pub end_frame: usize,
}

impl WordTiming {
    pub fn new(word: impl Into<String>, start_frame: usize, end_frame: usize) -> Self {
        Self {
            word: word.into(),
            start_frame,
            end_frame: end_frame.max(start_frame),
        }
    }

    /// `round((Ws + We) / 2)`, halves rounding up.
    pub fn mid_frame(&self) -> usize {
        (self.start_frame + self.end_frame).div_ceil(2)
    }
}

/// One pre-aligned take.
#[derive(Debug, Clone)]
pub struct Recording {
    pub source_id: String,
    pub fps: f64,
    /// `frames × (joints·3)`.
    pub motion: DMatrix<f64>,
    /// Per-frame tracking confidence, when the tracker reported one.
    pub confidence: Option<Vec<f64>>,
    pub audio: AudioTrack,
    pub words: Vec<WordTiming>,
}

impl Recording {
    pub fn frames(&self) -> usize {
        self.motion.nrows()
    }

    pub fn joints(&self) -> usize {
        self.motion.ncols() / 3
    }

    pub fn duration_s(&self) -> f64 {
        self.frames() as f64 / self.fps
    }
}

/// One window of a recording.
#[derive(Debug, Clone)]
pub struct Segment {
    pub clip: MotionClip,
    pub audio: AudioTrack,
    /// Words intersecting the window, clipped to it, frames relative to the window start.
    pub words: Vec<WordTiming>,
    pub segment_index: usize,
    pub mean_confidence: Option<f64>,
}

/// Frame geometry of the sliding window for a given fps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowGeometry {
    pub window: usize,
    pub hop: usize,
}

impl WindowGeometry {
    pub fn new(segment_seconds: f64, fps: f64) -> Result<Self> {
        if !(segment_seconds > 0.0) || !(fps > 0.0) {
            return Err(Error::Config(format!(
                "segment length and fps must be positive (s={segment_seconds}, fps={fps})"
            )));
        }
        let exact = segment_seconds * fps;
        let window = exact.round() as usize;
        if (exact - window as f64).abs() > 1e-6 || window < 2 {
            return Err(Error::Config(format!(
                "segment length {segment_seconds}s is not a whole number (>= 2) of frames at {fps} fps"
            )));
        }
        Ok(Self {
            window,
            hop: window / 2,
        })
    }

    /// Number of full windows in `frames` frames.
    pub fn count(&self, frames: usize) -> usize {
        if frames < self.window {
            0
        } else {
            (frames - self.window) / self.hop + 1
        }
    }

    pub fn start(&self, index: usize) -> usize {
        index * self.hop
    }
}

/// `max(0, floor((T − s)/(s/2)) + 1)`.
pub fn segment_count(duration_s: f64, segment_seconds: f64) -> usize {
    if duration_s < segment_seconds {
        return 0;
    }
    ((duration_s - segment_seconds) / (segment_seconds / 2.0)).floor() as usize + 1
}

/// Cuts a recording into windows of `segment_seconds` starting every half window.
pub fn segment_recording(rec: &Recording, segment_seconds: f64) -> Result<Vec<Segment>> {
    let geom = WindowGeometry::new(segment_seconds, rec.fps)?;
    let frames = rec.frames();
    let spf = audio::samples_per_frame(rec.audio.sample_rate(), rec.fps);
    let audio_frames = rec.audio.len() as f64 / spf;
    if (audio_frames - frames as f64).abs() > 1.0 {
        return Err(Error::Alignment(format!(
            "{}: motion has {frames} frames but audio covers {audio_frames:.2}",
            rec.source_id
        )));
    }
    if let Some(conf) = &rec.confidence {
        if conf.len() != frames {
            return Err(Error::Alignment(format!(
                "{}: {} confidence values for {frames} frames",
                rec.source_id,
                conf.len()
            )));
        }
    }
    for (i, w) in rec.words.iter().enumerate() {
        if w.start_frame > w.end_frame || w.end_frame >= frames {
            return Err(Error::Alignment(format!(
                "{}: word {i} ({:?}) spans frames {}..={} outside {frames} motion frames",
                rec.source_id, w.word, w.start_frame, w.end_frame
            )));
        }
    }

    let mut out = Vec::with_capacity(geom.count(frames));
    for index in 0..geom.count(frames) {
        let start = geom.start(index);
        let end = start + geom.window; // exclusive
        let clip = MotionClip {
            id: format!("{}:{index:05}", rec.source_id),
            source_id: rec.source_id.clone(),
            start_frame: start,
            fps: rec.fps,
            frames: rec.motion.rows(start, geom.window).into_owned(),
        };
        let a0 = (start as f64 * spf).round() as usize;
        let a1 = (end as f64 * spf).round() as usize;
        let words = words_in_window(&rec.words, start, end);
        let mean_confidence = rec
            .confidence
            .as_ref()
            .map(|c| c[start..end].iter().sum::<f64>() / geom.window as f64);
        out.push(Segment {
            clip,
            audio: rec.audio.window_padded(a0, a1 - a0),
            words,
            segment_index: index,
            mean_confidence,
        });
    }
    Ok(out)
}

/// Words intersecting `start..end`, clipped to it, with frames relative to `start`.
pub fn words_in_window(words: &[WordTiming], start: usize, end: usize) -> Vec<WordTiming> {
    words
        .iter()
        .filter(|w| w.start_frame < end && w.end_frame >= start)
        .map(|w| {
            WordTiming::new(
                w.word.clone(),
                w.start_frame.max(start) - start,
                w.end_frame.min(end - 1) - start,
            )
        })
        .collect()
}

/// Per-frame word-alignment weights in `[0, 1]`.
///
/// Each word contributes a triangle rising from 0 at `Ws − 1` to 1 at `Wm`
/// and falling back to 0 at `We + 1`; overlapping words combine by maximum.
pub fn alignment_envelope(words: &[WordTiming], num_frames: usize) -> Result<Vec<f64>> {
    let mut env = vec![0.0f64; num_frames];
    for (i, w) in words.iter().enumerate() {
        if w.start_frame > w.end_frame || w.end_frame >= num_frames {
            return Err(Error::InvalidInput(format!(
                "word {i} ({:?}) spans frames {}..={} outside 0..{num_frames}",
                w.word, w.start_frame, w.end_frame
            )));
        }
        if w.start_frame == w.end_frame {
            env[w.start_frame] = 1.0;
            continue;
        }
        let rise_from = w.start_frame as f64 - 1.0;
        let peak = w.mid_frame();
        let fall_to = w.end_frame as f64 + 1.0;
        for (f, slot) in env.iter_mut().enumerate().take(w.end_frame + 1).skip(w.start_frame) {
            let x = f as f64;
            let v = if f <= peak {
                (x - rise_from) / (peak as f64 - rise_from)
            } else {
                (fall_to - x) / (fall_to - peak as f64)
            };
            if v > *slot {
                *slot = v;
            }
        }
    }
    Ok(env)
}

/// Scales row `i` of `features` by `env[i]`.
pub fn apply_envelope(features: &DMatrix<f64>, env: &[f64]) -> Result<DMatrix<f64>> {
    if features.nrows() != env.len() {
        return Err(Error::DimensionMismatch {
            context: "envelope length",
            expected: features.nrows(),
            actual: env.len(),
        });
    }
    let mut out = features.clone();
    for (i, &w) in env.iter().enumerate() {
        out.row_mut(i).scale_mut(w);
    }
    Ok(out)
}

/// One central difference with replicate padding, per column.
fn central_difference(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let last = n - 1;
    DMatrix::from_fn(n, m.ncols(), |i, c| {
        let next = m[((i + 1).min(last), c)];
        let prev = m[(i.saturating_sub(1), c)];
        (next - prev) / 2.0
    })
}

/// Derivatives of order 1 through 6 stacked along the feature axis.
///
/// Output is `frames × (6·D)`; block `k` holds order `k + 1`. Units are per frame.
pub fn motion_derivatives(frames: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = frames.nrows();
    if n < DERIVATIVE_ORDERS + 1 {
        return Err(Error::InvalidInput(format!(
            "motion derivatives need at least {} frames, got {n}",
            DERIVATIVE_ORDERS + 1
        )));
    }
    let d = frames.ncols();
    let mut out = DMatrix::zeros(n, DERIVATIVE_ORDERS * d);
    let mut current = frames.clone();
    for order in 0..DERIVATIVE_ORDERS {
        current = central_difference(&current);
        out.columns_mut(order * d, d).copy_from(&current);
    }
    Ok(out)
}

/// Mean per-joint Euclidean displacement between consecutive frames.
pub fn mean_displacement(frames: &DMatrix<f64>) -> f64 {
    let n = frames.nrows();
    let joints = frames.ncols() / 3;
    if n < 2 || joints == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for f in 1..n {
        total += frame_displacements(frames, f - 1, f).sum::<f64>() / joints as f64;
    }
    total / (n - 1) as f64
}

/// Largest per-joint Euclidean displacement between consecutive frames.
pub fn max_displacement(frames: &DMatrix<f64>) -> f64 {
    (1..frames.nrows())
        .flat_map(|f| frame_displacements(frames, f - 1, f).collect::<Vec<_>>())
        .fold(0.0, f64::max)
}

fn frame_displacements(m: &DMatrix<f64>, a: usize, b: usize) -> impl Iterator<Item = f64> + '_ {
    (0..m.ncols() / 3).map(move |j| {
        (0..3)
            .map(|c| {
                let d = m[(b, j * 3 + c)] - m[(a, j * 3 + c)];
                d * d
            })
            .sum::<f64>()
            .sqrt()
    })
}

/// Thresholds for dropping unusable clips after segmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClipFilter {
    pub min_confidence: f64,
    pub min_movement: f64,
}

impl Default for ClipFilter {
    fn default() -> Self {
        Self {
            min_confidence: DEFAULT_CONFIDENCE_THRESHOLD,
            min_movement: DEFAULT_MOVEMENT_THRESHOLD,
        }
    }
}

impl ClipFilter {
    pub fn accepts(&self, segment: &Segment) -> bool {
        if let Some(c) = segment.mean_confidence {
            if c < self.min_confidence {
                return false;
            }
        }
        mean_displacement(&segment.clip.frames) >= self.min_movement
    }
}

/// Per-frame matrices for one segment. All share the frame axis.
#[derive(Debug, Clone)]
pub struct RawFeatures {
    pub gesture_positions: DMatrix<f64>,
    pub gesture_derivs: DMatrix<f64>,
    pub audio_spectrogram: DMatrix<f64>,
    pub audio_embedding: DMatrix<f64>,
    pub envelope: Vec<f64>,
    pub processed_spectrogram: DMatrix<f64>,
    pub processed_embedding: DMatrix<f64>,
}

impl RawFeatures {
    pub fn frames(&self) -> usize {
        self.gesture_positions.nrows()
    }
}

/// Derives raw features for a segment given the recording-level spectrogram
/// and audio embedding (both `recording frames × D`).
pub fn compute_raw_features(
    segment: &Segment,
    recording_spectrogram: &DMatrix<f64>,
    recording_embedding: &DMatrix<f64>,
) -> Result<RawFeatures> {
    let n = segment.clip.len();
    let start = segment.clip.start_frame;
    for (name, m) in [
        ("spectrogram", recording_spectrogram),
        ("audio embedding", recording_embedding),
    ] {
        if m.nrows() < start + n {
            return Err(Error::Alignment(format!(
                "{name} has {} frames, segment {} needs {}",
                m.nrows(),
                segment.clip.id,
                start + n
            )));
        }
    }
    let spec = recording_spectrogram.rows(start, n).into_owned();
    let emb = recording_embedding.rows(start, n).into_owned();
    let envelope = alignment_envelope(&segment.words, n)?;
    Ok(RawFeatures {
        gesture_positions: segment.clip.frames.clone(),
        gesture_derivs: motion_derivatives(&segment.clip.frames)?,
        processed_spectrogram: apply_envelope(&spec, &envelope)?,
        processed_embedding: apply_envelope(&emb, &envelope)?,
        audio_spectrogram: spec,
        audio_embedding: emb,
        envelope,
    })
}
