//! Splicing pre-captured iconic clips into a beat timeline.
//!
//! Placements are explicit inputs. Each clip is resampled to the timeline
//! fps, then ramps in over the blend window, holds and ramps out, all within
//! the clip's own span.
//!
//! A library on disk is `iconic.jsonl` (one [`IconicRecord`] per clip) and
//! a `frames.bin` in the node-frames layout with one frame per entry; each
//! record names its first row and frame count.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::timeline::{MotionTimeline, Origin, Span};
use crate::error::{Error, Result};
use crate::graph::NodeFrames;

pub const LIBRARY_FILE: &str = "iconic.jsonl";
pub const LIBRARY_FRAMES_FILE: &str = "frames.bin";

#[derive(Debug, Clone, PartialEq)]
pub struct IconicClip {
    pub id: String,
    pub label: String,
    /// Repetition number, 1 to 3.
    pub variant: u8,
    pub fps: f64,
    /// One row per frame, `joints × 3` columns.
    pub frames: DMatrix<f64>,
}

impl IconicClip {
    pub fn joints(&self) -> usize {
        self.frames.ncols() / 3
    }

    pub fn duration_s(&self) -> f64 {
        self.frames.nrows() as f64 / self.fps
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.variant) {
            return Err(Error::InvalidInput(format!(
                "clip {} has variant {}, expected 1 to 3",
                self.id, self.variant
            )));
        }
        if !(self.fps > 0.0) || self.frames.nrows() == 0 || !self.frames.ncols().is_multiple_of(3) {
            return Err(Error::InvalidInput(format!("clip {} has no usable frames", self.id)));
        }
        if !self.frames.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidInput(format!("clip {} holds non-finite values", self.id)));
        }
        Ok(())
    }

    /// Linear resampling onto a `fps` grid covering the same duration.
    pub fn resampled(&self, fps: f64) -> DMatrix<f64> {
        let n = self.frames.nrows();
        if (fps - self.fps).abs() < 1e-12 {
            return self.frames.clone();
        }
        let m = ((n as f64 * fps / self.fps).round() as usize).max(1);
        DMatrix::from_fn(m, self.frames.ncols(), |r, c| {
            let pos = (r as f64 * self.fps / fps).min((n - 1) as f64);
            let i = pos.floor() as usize;
            let frac = pos - i as f64;
            let a = self.frames[(i, c)];
            if frac == 0.0 || i + 1 >= n {
                a
            } else {
                a + (self.frames[(i + 1, c)] - a) * frac
            }
        })
    }
}

/// One entry of `placements.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IconicPlacement {
    /// Clip start on the timeline, seconds.
    pub t_s: f64,
    pub clip_id: String,
    /// Ramp length at each end, seconds.
    pub blend_s: f64,
}

/// Clip weight at frame `j` of an `m`-frame clip with `b`-frame ramps.
pub fn blend_weight(j: usize, m: usize, b: usize) -> f64 {
    if j < b {
        (j + 1) as f64 / (b + 1) as f64
    } else if j + b >= m {
        (m - j) as f64 / (b + 1) as f64
    } else {
        1.0
    }
}

struct Resolved<'a> {
    clip: &'a IconicClip,
    start: usize,
    ramp: usize,
    frames: DMatrix<f64>,
}

impl Resolved<'_> {
    fn end(&self) -> usize {
        self.start + self.frames.nrows()
    }
}

/// Blends every placement into `timeline`; frames outside placements are untouched.
pub fn blend_iconic(
    timeline: &MotionTimeline,
    clips: &[IconicClip],
    placements: &[IconicPlacement],
) -> Result<MotionTimeline> {
    let by_id: BTreeMap<&str, &IconicClip> = clips.iter().map(|c| (c.id.as_str(), c)).collect();
    let fps = timeline.fps;
    let mut resolved = Vec::with_capacity(placements.len());
    for p in placements {
        let clip = by_id
            .get(p.clip_id.as_str())
            .ok_or_else(|| Error::InvalidInput(format!("unknown iconic clip {:?}", p.clip_id)))?;
        clip.validate()?;
        if clip.joints() != timeline.joints {
            return Err(Error::DimensionMismatch {
                context: "iconic clip joints",
                expected: timeline.joints,
                actual: clip.joints(),
            });
        }
        if !(p.t_s >= 0.0) || !p.t_s.is_finite() || !(p.blend_s >= 0.0) || !p.blend_s.is_finite() {
            return Err(Error::InvalidInput(format!(
                "placement of {} needs non-negative t_s and blend_s",
                p.clip_id
            )));
        }
        let frames = clip.resampled(fps);
        let start = (p.t_s * fps).round() as usize;
        let ramp = (p.blend_s * fps).round() as usize;
        if 2 * ramp > frames.nrows() {
            return Err(Error::InvalidInput(format!(
                "blend window {}s exceeds half of clip {} ({}s)",
                p.blend_s,
                clip.id,
                clip.duration_s()
            )));
        }
        if start + frames.nrows() > timeline.len() {
            return Err(Error::InvalidInput(format!(
                "clip {} placed at {}s runs past the timeline end ({}s)",
                clip.id,
                p.t_s,
                timeline.duration_s()
            )));
        }
        resolved.push(Resolved {
            clip,
            start,
            ramp,
            frames,
        });
    }
    resolved.sort_by_key(|r| r.start);
    for pair in resolved.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.end() + a.ramp > b.start.saturating_sub(b.ramp) {
            return Err(Error::InvalidInput(format!(
                "placements of {} and {} overlap once dilated by their blend windows",
                a.clip.id, b.clip.id
            )));
        }
    }

    let mut out = timeline.clone();
    for r in &resolved {
        let m = r.frames.nrows();
        for j in 0..m {
            let w = blend_weight(j, m, r.ramp);
            let row = r.start + j;
            let mixed = out.frames.row(row) * (1.0 - w) + r.frames.row(j) * w;
            out.frames.row_mut(row).copy_from(&mixed);
        }
        out.spans = carve(&out.spans, r.start, r.end(), &r.clip.id);
    }
    out.validate()?;
    Ok(out)
}

/// Replaces `[start, end)` in a tiling span list with one iconic span.
fn carve(spans: &[Span], start: usize, end: usize, clip_id: &str) -> Vec<Span> {
    let mut out = Vec::with_capacity(spans.len() + 2);
    for s in spans {
        if s.end_frame <= start || s.start_frame >= end {
            out.push(s.clone());
            continue;
        }
        if s.start_frame < start {
            out.push(Span {
                end_frame: start,
                ..s.clone()
            });
        }
        if s.end_frame > end {
            out.push(Span {
                start_frame: end,
                ..s.clone()
            });
        }
    }
    out.push(Span {
        start_frame: start,
        end_frame: end,
        origin: Origin::Iconic {
            clip_id: clip_id.to_owned(),
        },
    });
    out.sort_by_key(|s| s.start_frame);
    out
}

/// One line of `iconic.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IconicRecord {
    pub id: String,
    pub label: String,
    pub variant: u8,
    pub fps: f64,
    /// First row in the library's frame store.
    pub offset: usize,
    pub frames: usize,
}

pub fn save_library(dir: &Path, clips: &[IconicClip]) -> Result<()> {
    let first = clips.first().ok_or(Error::Empty("no iconic clips to save"))?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(LIBRARY_FILE);
    let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
    let mut store = NodeFrames::new(first.fps, first.joints(), 1);
    let mut offset = 0;
    for c in clips {
        c.validate()?;
        let rec = IconicRecord {
            id: c.id.clone(),
            label: c.label.clone(),
            variant: c.variant,
            fps: c.fps,
            offset,
            frames: c.frames.nrows(),
        };
        writeln!(w, "{}", serde_json::to_string(&rec).expect("record serializes")).map_err(|e| Error::io(&path, e))?;
        for r in 0..c.frames.nrows() {
            store.push(&c.frames.rows(r, 1).into_owned())?;
        }
        offset += c.frames.nrows();
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    store.save(&dir.join(LIBRARY_FRAMES_FILE))
}

pub fn load_library(dir: &Path) -> Result<Vec<IconicClip>> {
    let path = dir.join(LIBRARY_FILE);
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let store = NodeFrames::load(&dir.join(LIBRARY_FRAMES_FILE))?;
    let mut clips = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: IconicRecord =
            serde_json::from_str(&line).map_err(|e| Error::malformed(&path, i + 1, e.to_string()))?;
        if rec.offset + rec.frames > store.len() {
            return Err(Error::malformed(&path, i + 1, "clip frames run past the frame store"));
        }
        let cols = store.joints * 3;
        let mut frames = DMatrix::zeros(rec.frames, cols);
        for r in 0..rec.frames {
            frames
                .row_mut(r)
                .copy_from(&store.window((rec.offset + r) as u32)?.row(0));
        }
        let clip = IconicClip {
            id: rec.id,
            label: rec.label,
            variant: rec.variant,
            fps: rec.fps,
            frames,
        };
        clip.validate()
            .map_err(|e| Error::malformed(&path, i + 1, e.to_string()))?;
        clips.push(clip);
    }
    if clips.is_empty() {
        return Err(Error::Empty("iconic library holds no clips"));
    }
    Ok(clips)
}

pub fn load_placements(path: &Path) -> Result<Vec<IconicPlacement>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

/// Three variants per label: the rest pose with both wrists (the last two
/// joints) tracing a smooth out-and-back stroke of random direction.
pub fn synthetic_library(rest: &[f64], labels: &[&str], fps: f64, seconds: f64, seed: u64) -> Result<Vec<IconicClip>> {
    if rest.is_empty() || !rest.len().is_multiple_of(3) || !(fps > 0.0) || !(seconds > 0.0) {
        return Err(Error::InvalidInput(
            "rest pose, fps and duration must be non-empty and positive".into(),
        ));
    }
    let joints = rest.len() / 3;
    let n = ((seconds * fps).round() as usize).max(2);
    let wrists = joints.saturating_sub(2)..joints;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clips = Vec::new();
    for label in labels {
        for variant in 1..=3u8 {
            let dirs: Vec<[f64; 3]> = wrists
                .clone()
                .map(|_| std::array::from_fn(|_| rng.random_range(-0.15..0.15)))
                .collect();
            let frames = DMatrix::from_fn(n, rest.len(), |f, c| {
                let joint = c / 3;
                let lift = 0.5 * (1.0 - (2.0 * PI * f as f64 / (n - 1) as f64).cos());
                match wrists.clone().position(|w| w == joint) {
                    Some(k) => rest[c] + lift * dirs[k][c % 3],
                    None => rest[c],
                }
            });
            clips.push(IconicClip {
                id: format!("{label}_{variant}"),
                label: (*label).to_owned(),
                variant,
                fps,
                frames,
            });
        }
    }
    Ok(clips)
}
