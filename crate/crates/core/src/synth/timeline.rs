//! Stitched motion output with per-span provenance.
//!
//! Every chosen node contributes its full stored window, placed one hop
//! (half a window) after the previous one. The incoming block is faded in
//! over the first `crossfade` frames of each overlap and passes through
//! after that, so a timeline of `n` steps holds `(n − 1)·hop + window` frames.
//!
//! On disk a timeline is `timeline.json` (fps, joints, spans, per-step
//! records) next to a `frames.bin` in the node-frames layout holding a
//! single block.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::config::GenerationConfig;
use super::search::{choose_nodes, StepRecord};
use crate::embed::QuerySegment;
use crate::error::{Error, Result};
use crate::graph::{GestureGraph, NodeFrames};

pub const TIMELINE_VERSION: u32 = 1;
pub const TIMELINE_FILE: &str = "timeline.json";
pub const FRAMES_FILE: &str = "frames.bin";
pub const CSV_FILE: &str = "frames.csv";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Origin {
    Node { id: u32 },
    Iconic { clip_id: String },
}

/// Half-open frame range `[start_frame, end_frame)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start_frame: usize,
    pub end_frame: usize,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionTimeline {
    pub fps: f64,
    pub joints: usize,
    /// One row per frame, `joints × 3` columns.
    pub frames: DMatrix<f64>,
    pub spans: Vec<Span>,
    pub steps: Vec<StepRecord>,
}

impl MotionTimeline {
    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.fps
    }

    /// Checks that spans tile `[0, len)` in order and every value is finite.
    pub fn validate(&self) -> Result<()> {
        if self.frames.ncols() != self.joints * 3 {
            return Err(Error::Invariant(format!(
                "timeline has {} columns for {} joints",
                self.frames.ncols(),
                self.joints
            )));
        }
        let mut cursor = 0;
        for s in &self.spans {
            if s.start_frame != cursor || s.end_frame <= s.start_frame {
                return Err(Error::Invariant(format!(
                    "span [{}, {}) does not continue from frame {cursor}",
                    s.start_frame, s.end_frame
                )));
            }
            cursor = s.end_frame;
        }
        if cursor != self.len() {
            return Err(Error::Invariant(format!(
                "spans end at {cursor}, timeline has {} frames",
                self.len()
            )));
        }
        if !self.frames.iter().all(|x| x.is_finite()) {
            return Err(Error::Invariant("timeline holds non-finite values".into()));
        }
        Ok(())
    }

    /// Node ids of the beat spans in order, one per generation step.
    pub fn node_sequence(&self) -> Vec<u32> {
        self.steps.iter().map(|s| s.node).collect()
    }

    pub fn save(&self, dir: &Path, with_csv: bool) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let doc = TimelineDoc {
            version: TIMELINE_VERSION,
            fps: self.fps,
            joints: self.joints,
            frames: self.len(),
            spans: self.spans.clone(),
            steps: self.steps.clone(),
        };
        let mut json = serde_json::to_vec_pretty(&doc).expect("timeline serializes");
        json.push(b'\n');
        let path = dir.join(TIMELINE_FILE);
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        let mut frames = NodeFrames::new(self.fps, self.joints, self.len());
        frames.push(&self.frames)?;
        frames.save(&dir.join(FRAMES_FILE))?;
        if with_csv {
            let path = dir.join(CSV_FILE);
            std::fs::write(&path, self.to_csv()).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(TIMELINE_FILE);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let doc: TimelineDoc = serde_json::from_slice(&bytes).map_err(|e| Error::format(&path, e.to_string()))?;
        if doc.version != TIMELINE_VERSION {
            return Err(Error::format(
                &path,
                format!("timeline version {}, expected {TIMELINE_VERSION}", doc.version),
            ));
        }
        let frames_path = dir.join(FRAMES_FILE);
        let frames = NodeFrames::load(&frames_path)?;
        if frames.len() != 1 || frames.frames_per_node != doc.frames || frames.joints != doc.joints {
            return Err(Error::format(&frames_path, "frames do not match timeline.json"));
        }
        let t = Self {
            fps: doc.fps,
            joints: doc.joints,
            frames: frames.window(0)?,
            spans: doc.spans,
            steps: doc.steps,
        };
        t.validate().map_err(|e| Error::format(&path, e.to_string()))?;
        Ok(t)
    }

    /// Frame index, then x, y, z per joint.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame");
        for j in 0..self.joints {
            let _ = write!(out, ",j{j}_x,j{j}_y,j{j}_z");
        }
        out.push('\n');
        for (i, row) in self.frames.row_iter().enumerate() {
            let _ = write!(out, "{i}");
            for x in row.iter() {
                let _ = write!(out, ",{x}");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TimelineDoc {
    version: u32,
    fps: f64,
    joints: usize,
    frames: usize,
    spans: Vec<Span>,
    steps: Vec<StepRecord>,
}

/// Overlap-adds equally shaped blocks placed every `hop` frames.
///
/// In each overlap the first `crossfade` frames blend as
/// `(1 − w)·outgoing + w·incoming` with `w = (j + 1)/(crossfade + 1)`; the
/// remaining frames are the incoming block. `crossfade` is clamped to the
/// overlap and 0 gives a hard cut.
pub fn stitch(blocks: &[DMatrix<f64>], hop: usize, crossfade: usize) -> Result<DMatrix<f64>> {
    let first = blocks.first().ok_or(Error::Empty("no blocks to stitch"))?;
    let (window, cols) = first.shape();
    if let Some(b) = blocks.iter().find(|b| b.shape() != (window, cols)) {
        return Err(Error::InvalidInput(format!(
            "block shape {:?} differs from {:?}",
            b.shape(),
            (window, cols)
        )));
    }
    if hop == 0 || hop > window {
        return Err(Error::InvalidInput(format!(
            "hop {hop} leaves an overlap outside the block length {window}"
        )));
    }
    let overlap = window - hop;
    let fade = crossfade.min(overlap);
    let total = (blocks.len() - 1) * hop + window;
    let mut out = DMatrix::zeros(total, cols);
    out.rows_mut(0, window).copy_from(first);
    for (t, block) in blocks.iter().enumerate().skip(1) {
        let base = t * hop;
        for j in 0..window {
            let incoming = block.row(j);
            if j < fade {
                let w = (j + 1) as f64 / (fade + 1) as f64;
                let blended = out.row(base + j) + (incoming - out.row(base + j)) * w;
                out.row_mut(base + j).copy_from(&blended);
            } else {
                out.row_mut(base + j).copy_from(&incoming);
            }
        }
    }
    Ok(out)
}

/// `[t·hop, (t + 1)·hop)` per step; the last span runs to the end.
pub fn step_spans(nodes: &[u32], hop: usize, total: usize) -> Vec<Span> {
    nodes
        .iter()
        .enumerate()
        .map(|(t, &id)| Span {
            start_frame: t * hop,
            end_frame: if t + 1 == nodes.len() { total } else { (t + 1) * hop },
            origin: Origin::Node { id },
        })
        .collect()
}

/// Chooses one node per query segment and stitches their windows.
pub fn generate(
    graph: &GestureGraph,
    frames: &NodeFrames,
    queries: &[QuerySegment],
    cfg: &GenerationConfig,
) -> Result<MotionTimeline> {
    check_frames(graph, frames, cfg)?;
    assemble(frames, choose_nodes(graph, queries, cfg)?, cfg)
}

/// Checks that `frames` holds one window per graph node at the configured segment length.
pub fn check_frames(graph: &GestureGraph, frames: &NodeFrames, cfg: &GenerationConfig) -> Result<()> {
    if frames.len() != graph.len() {
        return Err(Error::InvalidInput(format!(
            "frame store holds {} nodes, graph has {}",
            frames.len(),
            graph.len()
        )));
    }
    let window = frames.frames_per_node;
    let expected = cfg.segment_seconds * frames.fps;
    if (expected - window as f64).abs() > 1e-6 {
        return Err(Error::Config(format!(
            "segment length {}s is {expected} frames at {} fps, graph windows hold {window}",
            cfg.segment_seconds, frames.fps
        )));
    }
    Ok(())
}

/// Stitches the windows of already chosen nodes.
pub fn assemble(frames: &NodeFrames, steps: Vec<StepRecord>, cfg: &GenerationConfig) -> Result<MotionTimeline> {
    let blocks = steps
        .iter()
        .map(|s| frames.window(s.node))
        .collect::<Result<Vec<_>>>()?;
    let hop = frames.frames_per_node / 2;
    let crossfade = (cfg.crossfade_seconds * frames.fps).round() as usize;
    let stitched = stitch(&blocks, hop, crossfade)?;
    let nodes: Vec<u32> = steps.iter().map(|s| s.node).collect();
    let spans = step_spans(&nodes, hop, stitched.nrows());
    let t = MotionTimeline {
        fps: frames.fps,
        joints: frames.joints,
        frames: stitched,
        spans,
        steps,
    };
    t.validate()?;
    Ok(t)
}

/// Largest Euclidean joint displacement between consecutive frames.
pub fn max_joint_displacement(frames: &DMatrix<f64>) -> f64 {
    let joints = frames.ncols() / 3;
    let mut best = 0.0f64;
    for f in 1..frames.nrows() {
        for j in 0..joints {
            let d: f64 = (0..3)
                .map(|c| (frames[(f, 3 * j + c)] - frames[(f - 1, 3 * j + c)]).powi(2))
                .sum::<f64>()
                .sqrt();
            best = best.max(d);
        }
    }
    best
}
