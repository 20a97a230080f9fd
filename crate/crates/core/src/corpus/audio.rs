//! Audio tracks, resampling and the reference per-frame audio encoder.

use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Sample rate every track is resampled to on ingest.
pub const TARGET_SAMPLE_RATE: u32 = 24_000;

/// Mono audio, shared so that segment windows can borrow ranges without copying.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioTrack {
    samples: Arc<[f32]>,
    range: Range<usize>,
    sample_rate: u32,
}

impl AudioTrack {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        let len = samples.len();
        Self {
            samples: samples.into(),
            range: 0..len,
            sample_rate,
        }
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples[self.range.clone()]
    }

    pub fn len(&self) -> usize {
        self.range.len()
    }

    pub fn is_empty(&self) -> bool {
        self.range.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / f64::from(self.sample_rate)
    }

    /// Borrowing sub-window. Ranges running past the end are clamped.
    pub fn slice(&self, range: Range<usize>) -> AudioTrack {
        let start = (self.range.start + range.start).min(self.range.end);
        let end = (self.range.start + range.end).min(self.range.end).max(start);
        AudioTrack {
            samples: Arc::clone(&self.samples),
            range: start..end,
            sample_rate: self.sample_rate,
        }
    }

    /// Owned copy of exactly `len` samples starting at `start`, zero padded past the end.
    pub fn window_padded(&self, start: usize, len: usize) -> AudioTrack {
        let src = self.samples();
        let mut out = vec![0.0f32; len];
        if start < src.len() {
            let n = len.min(src.len() - start);
            out[..n].copy_from_slice(&src[start..start + n]);
        }
        AudioTrack::new(out, self.sample_rate)
    }

    /// Linear-interpolation resampling.
    pub fn resample(&self, target_rate: u32) -> AudioTrack {
        if target_rate == self.sample_rate || self.is_empty() {
            return AudioTrack::new(self.samples().to_vec(), target_rate);
        }
        let src = self.samples();
        let ratio = f64::from(self.sample_rate) / f64::from(target_rate);
        let out_len = ((src.len() as f64) / ratio).round().max(1.0) as usize;
        let last = src.len() - 1;
        let out = (0..out_len)
            .map(|i| {
                let pos = i as f64 * ratio;
                let i0 = (pos.floor() as usize).min(last);
                let i1 = (i0 + 1).min(last);
                let frac = (pos - i0 as f64) as f32;
                src[i0] * (1.0 - frac) + src[i1] * frac
            })
            .collect();
        AudioTrack::new(out, target_rate)
    }

    /// Reads a WAV file, downmixing to mono and resampling to [`TARGET_SAMPLE_RATE`].
    pub fn read_wav(path: &Path) -> Result<AudioTrack> {
        let mut reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
        let spec = reader.spec();
        let channels = usize::from(spec.channels.max(1));
        let interleaved: Vec<f32> = match spec.sample_format {
            hound::SampleFormat::Float => reader
                .samples::<f32>()
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| wav_error(path, e))?,
            hound::SampleFormat::Int => {
                let scale = 1.0 / (1u64 << (spec.bits_per_sample.saturating_sub(1))) as f32;
                reader
                    .samples::<i32>()
                    .map(|s| s.map(|v| v as f32 * scale))
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| wav_error(path, e))?
            }
        };
        let mono: Vec<f32> = interleaved
            .chunks(channels)
            .map(|c| (c.iter().sum::<f32>() / c.len() as f32).clamp(-1.0, 1.0))
            .collect();
        Ok(AudioTrack::new(mono, spec.sample_rate).resample(TARGET_SAMPLE_RATE))
    }

    /// Writes 16-bit mono PCM.
    pub fn write_wav(&self, path: &Path) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
        for &s in self.samples() {
            let v = (s.clamp(-1.0, 1.0) * f32::from(i16::MAX)).round() as i16;
            writer.write_sample(v).map_err(|e| wav_error(path, e))?;
        }
        writer.finalize().map_err(|e| wav_error(path, e))
    }
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    }
}

/// Number of audio samples per motion frame.
pub fn samples_per_frame(sample_rate: u32, fps: f64) -> f64 {
    f64::from(sample_rate) / fps
}

/// Produces a per-frame audio embedding aligned with motion frames.
pub trait AudioEncoder: Send + Sync {
    fn id(&self) -> &str;
    fn output_dim(&self) -> usize;
    /// Returns a `frames × output_dim` matrix.
    fn encode(&self, audio: &AudioTrack, fps: f64, frames: usize) -> DMatrix<f64>;
}

/// Deterministic, parameter-free frame descriptor standing in for a learned
/// speech embedding: loudness, peak, zero-crossing rate and a four-block
/// energy contour per frame.
#[derive(Debug, Clone, Default)]
pub struct ReferenceAudioEncoder;

impl ReferenceAudioEncoder {
    pub const DIM: usize = 8;
}

impl AudioEncoder for ReferenceAudioEncoder {
    fn id(&self) -> &str {
        "reference-frame-descriptor"
    }

    fn output_dim(&self) -> usize {
        Self::DIM
    }

    fn encode(&self, audio: &AudioTrack, fps: f64, frames: usize) -> DMatrix<f64> {
        let spf = samples_per_frame(audio.sample_rate(), fps);
        let src = audio.samples();
        let mut out = DMatrix::zeros(frames, Self::DIM);
        for f in 0..frames {
            let start = ((f as f64 * spf).round() as usize).min(src.len());
            let end = (((f + 1) as f64 * spf).round() as usize).min(src.len());
            let block = &src[start..end];
            if block.is_empty() {
                continue;
            }
            let n = block.len() as f64;
            let energy: f64 = block.iter().map(|&x| f64::from(x) * f64::from(x)).sum();
            let rms = (energy / n).sqrt();
            let peak = block.iter().fold(0.0f64, |m, &x| m.max(f64::from(x).abs()));
            let crossings = block.windows(2).filter(|w| (w[0] >= 0.0) != (w[1] >= 0.0)).count() as f64;
            out[(f, 0)] = rms;
            out[(f, 1)] = (rms + 1e-6).ln() / 14.0 + 1.0;
            out[(f, 2)] = peak;
            out[(f, 3)] = crossings / n;
            let quarter = block.len().div_ceil(4).max(1);
            for (q, chunk) in block.chunks(quarter).take(4).enumerate() {
                let e: f64 = chunk.iter().map(|&x| f64::from(x) * f64::from(x)).sum();
                out[(f, 4 + q)] = (e / chunk.len() as f64).sqrt();
            }
        }
        out
    }
}
