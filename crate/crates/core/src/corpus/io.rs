//! On-disk corpus layout.
//!
//! One directory per recording:
//!
//! ```text
//! <recording>/motion.jsonl   {"joints": J, "fps": F} then one pose per line
//! <recording>/audio.wav      mono, any rate (resampled to 24 kHz on read)
//! <recording>/words.jsonl    {"word": "...", "start_s": 0.1, "end_s": 0.4} per line
//! ```
//!
//! A pose line is either a bare `[[x, y, z], ...]` array or
//! `{"joints": [[x, y, z], ...], "confidence": 0.93}`.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{poses_to_matrix, AudioTrack, Pose, Recording, WordTiming};
use crate::error::{Error, Result};

pub const MOTION_FILE: &str = "motion.jsonl";
pub const AUDIO_FILE: &str = "audio.wav";
pub const WORDS_FILE: &str = "words.jsonl";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MotionHeader {
    joints: usize,
    fps: f64,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum PoseLine {
    Bare(Vec<[f64; 3]>),
    Tagged {
        joints: Vec<[f64; 3]>,
        confidence: Option<f64>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WordLine {
    pub word: String,
    pub start_s: f64,
    pub end_s: f64,
}

/// Lists recording directories (those containing a motion file), sorted by name.
pub fn list_recordings(corpus_dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(corpus_dir).map_err(|e| Error::io(corpus_dir, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(corpus_dir, e))?;
        let path = entry.path();
        if path.is_dir() && path.join(MOTION_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no recordings found in {} (expected subdirectories containing {MOTION_FILE})",
            corpus_dir.display()
        )));
    }
    Ok(dirs)
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = (usize, std::io::Result<String>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(BufReader::new(file).lines().enumerate().map(|(i, l)| (i + 1, l)))
}

/// Reads the motion file, returning fps, poses and optional confidence.
pub fn read_motion(path: &Path) -> Result<(f64, Vec<Pose>, Option<Vec<f64>>)> {
    let mut lines = open_lines(path)?.filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()));
    let (line_no, header) = lines
        .next()
        .ok_or_else(|| Error::malformed(path, 1, "missing header line"))?;
    let header = header.map_err(|e| Error::io(path, e))?;
    let header: MotionHeader = serde_json::from_str(&header).map_err(|e| Error::malformed(path, line_no, e))?;
    if !(header.fps > 0.0) || header.joints == 0 {
        return Err(Error::malformed(path, line_no, "header needs joints > 0 and fps > 0"));
    }
    let mut poses = Vec::new();
    let mut confidence = Vec::new();
    let mut any_confidence = false;
    for (line_no, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        let parsed: PoseLine = serde_json::from_str(&line).map_err(|e| Error::malformed(path, line_no, e))?;
        let (joints, conf) = match parsed {
            PoseLine::Bare(j) => (j, None),
            PoseLine::Tagged { joints, confidence } => (joints, confidence),
        };
        if joints.len() != header.joints {
            return Err(Error::malformed(
                path,
                line_no,
                format!("pose has {} joints, header declares {}", joints.len(), header.joints),
            ));
        }
        let pose = Pose(joints);
        if !pose.is_finite() {
            return Err(Error::malformed(path, line_no, "non-finite coordinate"));
        }
        any_confidence |= conf.is_some();
        confidence.push(conf.unwrap_or(1.0));
        poses.push(pose);
    }
    if poses.is_empty() {
        return Err(Error::malformed(path, line_no, "no poses after header"));
    }
    Ok((header.fps, poses, any_confidence.then_some(confidence)))
}

/// Reads word timings and converts them to inclusive frame spans, clamped to `frames`.
pub fn read_words(path: &Path, fps: f64, frames: usize) -> Result<Vec<WordTiming>> {
    let mut words = Vec::new();
    for (line_no, line) in open_lines(path)? {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let w: WordLine = serde_json::from_str(&line).map_err(|e| Error::malformed(path, line_no, e))?;
        if !(w.start_s >= 0.0) || !(w.end_s >= w.start_s) {
            return Err(Error::malformed(path, line_no, "word needs 0 <= start_s <= end_s"));
        }
        words.push(word_from_seconds(&w, fps, frames));
    }
    words.sort_by_key(|w| (w.start_frame, w.end_frame));
    Ok(words)
}

pub fn word_from_seconds(w: &WordLine, fps: f64, frames: usize) -> WordTiming {
    let last = frames.saturating_sub(1);
    let start = ((w.start_s * fps).floor() as usize).min(last);
    let end = ((w.end_s * fps).floor() as usize).min(last);
    WordTiming::new(w.word.clone(), start, end)
}

/// Loads one recording directory. The source id is the directory name.
pub fn read_recording(dir: &Path) -> Result<Recording> {
    let source_id = dir
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::InvalidInput(format!("bad recording directory {}", dir.display())))?
        .to_string();
    let (fps, poses, confidence) = read_motion(&dir.join(MOTION_FILE))?;
    let motion = poses_to_matrix(&poses)?;
    let audio = AudioTrack::read_wav(&dir.join(AUDIO_FILE))?;
    let words_path = dir.join(WORDS_FILE);
    let words = if words_path.exists() {
        read_words(&words_path, fps, motion.nrows())?
    } else {
        Vec::new()
    };
    Ok(Recording {
        source_id,
        fps,
        motion,
        confidence,
        audio,
        words,
    })
}

/// Writes a recording in the corpus layout.
pub fn write_recording(dir: &Path, rec: &Recording) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let motion_path = dir.join(MOTION_FILE);
    let file = File::create(&motion_path).map_err(|e| Error::io(&motion_path, e))?;
    let mut w = BufWriter::new(file);
    let header = MotionHeader {
        joints: rec.joints(),
        fps: rec.fps,
    };
    let io_err = |e| Error::io(&motion_path, e);
    writeln!(w, "{}", serde_json::to_string(&header).expect("header serializes")).map_err(io_err)?;
    for f in 0..rec.frames() {
        let pose = super::matrix_row_to_pose(&rec.motion, f);
        let line = match &rec.confidence {
            Some(c) => serde_json::json!({ "joints": pose.0, "confidence": c[f] }).to_string(),
            None => serde_json::to_string(&pose.0).expect("pose serializes"),
        };
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;

    rec.audio.write_wav(&dir.join(AUDIO_FILE))?;

    let words_path = dir.join(WORDS_FILE);
    let file = File::create(&words_path).map_err(|e| Error::io(&words_path, e))?;
    let mut w = BufWriter::new(file);
    for word in &rec.words {
        let line = WordLine {
            word: word.word.clone(),
            start_s: (word.start_frame as f64 + 0.25) / rec.fps,
            end_s: (word.end_frame as f64 + 0.5) / rec.fps,
        };
        writeln!(w, "{}", serde_json::to_string(&line).expect("word serializes"))
            .map_err(|e| Error::io(&words_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&words_path, e))
}
