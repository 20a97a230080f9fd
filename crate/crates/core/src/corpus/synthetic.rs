//! Deterministic synthetic corpus for tests and demos.
//!
//! Motion is smooth band-limited noise around a fixed skeleton layout, with
//! a short wrist pulse at every word onset so that gesture and speech are
//! correlated. Audio is a harmonic tone per word under a Hann envelope on a
//! low noise floor. Word onsets follow a Poisson process.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::{io, AudioTrack, Recording, WordTiming, TARGET_SAMPLE_RATE};
use crate::error::Result;

const VOCABULARY: &[&str] = &[
    "the", "board", "piece", "move", "you", "can", "place", "row", "first", "then", "each", "player", "turn", "win",
    "game", "left", "right", "corner", "square", "take", "four", "line", "column", "done", "when", "free", "space",
    "rule", "start", "end", "score", "point", "here", "there", "small", "large", "next", "again", "always", "never",
];

/// Number of sinusoids per coordinate.
const PARTIALS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub sources: usize,
    pub duration_s: f64,
    pub fps: f64,
    pub joints: usize,
    pub words_per_second: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            sources: 2,
            duration_s: 60.0,
            fps: 30.0,
            joints: 8,
            words_per_second: 2.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub recordings: Vec<Recording>,
}

impl SyntheticCorpus {
    pub fn generate(spec: &SyntheticSpec) -> Self {
        let recordings = (0..spec.sources).map(|i| synth_recording(spec, i)).collect();
        Self { recordings }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        for rec in &self.recordings {
            io::write_recording(&dir.join(&rec.source_id), rec)?;
        }
        Ok(())
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn synth_recording(spec: &SyntheticSpec, index: usize) -> Recording {
    let frames = (spec.duration_s * spec.fps).round() as usize;
    let samples = (frames as f64 * f64::from(TARGET_SAMPLE_RATE) / spec.fps).round() as usize;
    let words = synth_words(spec, index, frames);
    let motion = synth_motion(spec, index, frames, &words);
    let audio = synth_audio(spec, index, samples, &words);
    Recording {
        source_id: format!("src{index:03}"),
        fps: spec.fps,
        motion,
        confidence: None,
        audio,
        words,
    }
}

fn synth_words(spec: &SyntheticSpec, index: usize, frames: usize) -> Vec<WordTiming> {
    let mut rng = stream_rng(spec.seed, 3 * index as u64);
    let gap = Exp::new(spec.words_per_second.max(1e-3)).expect("positive rate");
    let mut words = Vec::new();
    let mut t = gap.sample(&mut rng);
    loop {
        let dur = rng.random_range(0.12..0.45);
        let start = (t * spec.fps).floor() as usize;
        let end = ((t + dur) * spec.fps).floor() as usize;
        if end >= frames {
            break;
        }
        let word = VOCABULARY[rng.random_range(0..VOCABULARY.len())];
        words.push(WordTiming::new(word, start, end));
        t += dur + 0.05 + gap.sample(&mut rng);
    }
    words
}

fn synth_motion(spec: &SyntheticSpec, index: usize, frames: usize, words: &[WordTiming]) -> DMatrix<f64> {
    let mut rng = stream_rng(spec.seed, 3 * index as u64 + 1);
    let dims = spec.joints * 3;
    // (amplitude, frequency Hz, phase) per partial per coordinate
    let partials: Vec<[(f64, f64, f64); PARTIALS]> = (0..dims)
        .map(|_| {
            std::array::from_fn(|_| {
                (
                    rng.random_range(0.02..0.08),
                    rng.random_range(0.15..1.6),
                    rng.random_range(0.0..2.0 * PI),
                )
            })
        })
        .collect();
    let base: Vec<f64> = (0..dims)
        .map(|d| {
            let joint = d / 3;
            match d % 3 {
                0 => (joint as f64 - spec.joints as f64 / 2.0) * 0.15,
                1 => 1.0 - joint as f64 * 0.1,
                _ => 0.0,
            }
        })
        .collect();
    // wrist pulses: last two joints lift briefly at each word onset
    let wrists = spec.joints.saturating_sub(2)..spec.joints;
    let pulse_width = 0.12 * spec.fps;
    let pulse_gain: Vec<f64> = words.iter().map(|_| rng.random_range(0.03..0.09)).collect();

    DMatrix::from_fn(frames, dims, |f, d| {
        let t = f as f64 / spec.fps;
        let mut v = base[d];
        for &(a, freq, phase) in &partials[d] {
            v += a * (2.0 * PI * freq * t + phase).sin();
        }
        if wrists.contains(&(d / 3)) && d % 3 == 1 {
            for (w, gain) in words.iter().zip(&pulse_gain) {
                let x = (f as f64 - w.start_frame as f64) / pulse_width;
                if x.abs() < 4.0 {
                    v += gain * (-0.5 * x * x).exp();
                }
            }
        }
        v
    })
}

fn synth_audio(spec: &SyntheticSpec, index: usize, samples: usize, words: &[WordTiming]) -> AudioTrack {
    let mut rng = stream_rng(spec.seed, 3 * index as u64 + 2);
    let sr = f64::from(TARGET_SAMPLE_RATE);
    let mut out: Vec<f32> = (0..samples).map(|_| rng.random_range(-0.005f32..0.005)).collect();
    for w in words {
        let f0 = rng.random_range(100.0..240.0);
        let gain = rng.random_range(0.15..0.35);
        let s0 = (w.start_frame as f64 / spec.fps * sr) as usize;
        let s1 = (((w.end_frame + 1) as f64 / spec.fps * sr) as usize).min(samples);
        let len = (s1 - s0).max(1) as f64;
        for (i, slot) in out[s0..s1].iter_mut().enumerate() {
            let t = i as f64 / sr;
            let env = 0.5 - 0.5 * (2.0 * PI * i as f64 / len).cos();
            let tone = (2.0 * PI * f0 * t).sin() + 0.5 * (4.0 * PI * f0 * t).sin() + 0.25 * (6.0 * PI * f0 * t).sin();
            *slot += (gain * env * tone / 1.75) as f32;
        }
    }
    AudioTrack::new(out, TARGET_SAMPLE_RATE)
}
