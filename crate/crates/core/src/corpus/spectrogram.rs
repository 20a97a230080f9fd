//! Frame-aligned log-magnitude spectrogram.
//!
//! The hop is one motion frame worth of samples, so spectrogram row `i`
//! describes the audio under motion frame `i`. Each row uses a Hann window of
//! four hops centered on the middle of the frame, zero padded at the edges.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::audio::AudioTrack;
use crate::error::{Error, Result};

/// Window length as a multiple of the hop.
pub const WINDOW_HOPS: usize = 4;

#[derive(Clone)]
pub struct Stft {
    hop: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft")
            .field("hop", &self.hop)
            .field("window_len", &self.window.len())
            .finish()
    }
}

impl Stft {
    pub fn new(sample_rate: u32, fps: f64) -> Result<Self> {
        if !(fps > 0.0) {
            return Err(Error::InvalidInput(format!("fps must be positive, got {fps}")));
        }
        let hop = (f64::from(sample_rate) / fps).round() as usize;
        if hop == 0 {
            return Err(Error::InvalidInput("hop length rounds to zero".into()));
        }
        let n = hop * WINDOW_HOPS;
        // periodic Hann
        let window = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(n);
        Ok(Self { hop, window, fft })
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    pub fn bins(&self) -> usize {
        self.window.len() / 2 + 1
    }

    /// Frequency in Hz of bin `k`.
    pub fn bin_frequency(&self, k: usize, sample_rate: u32) -> f64 {
        k as f64 * f64::from(sample_rate) / self.window.len() as f64
    }

    /// `frames × bins` matrix of `ln(1 + |X|)`, not yet normalized.
    pub fn log_magnitude(&self, audio: &AudioTrack, frames: usize) -> Result<DMatrix<f64>> {
        let bins = self.bins();
        let mut out = DMatrix::zeros(frames, bins);
        self.for_each_row(audio, frames, |f, row| {
            for (k, v) in row.iter().enumerate() {
                out[(f, k)] = *v;
            }
        })?;
        Ok(out)
    }

    /// Same as [`pool_bands`] over [`Stft::log_magnitude`] without holding
    /// the full-resolution matrix.
    pub fn log_magnitude_bands(&self, audio: &AudioTrack, frames: usize, bands: usize) -> Result<DMatrix<f64>> {
        let ranges = band_ranges(self.bins(), bands);
        let mut out = DMatrix::zeros(frames, ranges.len());
        self.for_each_row(audio, frames, |f, row| {
            for (b, &(lo, hi)) in ranges.iter().enumerate() {
                out[(f, b)] = row[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
            }
        })?;
        Ok(out)
    }

    fn for_each_row(&self, audio: &AudioTrack, frames: usize, mut sink: impl FnMut(usize, &[f64])) -> Result<()> {
        if audio.is_empty() {
            return Err(Error::Empty("audio track"));
        }
        let src = audio.samples();
        let n = self.window.len();
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut row = vec![0.0; self.bins()];
        for f in 0..frames {
            let center = f * self.hop + self.hop / 2;
            let start = center as isize - (n / 2) as isize;
            for (i, slot) in buf.iter_mut().enumerate() {
                let idx = start + i as isize;
                let x = if idx >= 0 && (idx as usize) < src.len() {
                    f64::from(src[idx as usize])
                } else {
                    0.0
                };
                *slot = Complex::new(x * self.window[i], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (k, v) in row.iter_mut().enumerate() {
                *v = buf[k].norm().ln_1p();
            }
            sink(f, &row);
        }
        Ok(())
    }

    /// Number of frames a track yields when no motion stream dictates it.
    pub fn natural_frames(&self, audio: &AudioTrack) -> usize {
        audio.len() / self.hop
    }
}

/// Scales a log spectrogram into `[0, 1]` by a (corpus-wide) maximum.
pub fn normalize_max(spec: &mut DMatrix<f64>, max: f64) {
    if max > 0.0 {
        *spec /= max;
    } else {
        spec.fill(0.0);
    }
}

/// Log spectrogram of one track normalized by its own maximum.
pub fn spectrogram(audio: &AudioTrack, fps: f64) -> Result<DMatrix<f64>> {
    let stft = Stft::new(audio.sample_rate(), fps)?;
    let frames = stft.natural_frames(audio);
    let mut spec = stft.log_magnitude(audio, frames)?;
    let max = spec.max();
    normalize_max(&mut spec, max);
    Ok(spec)
}

fn band_ranges(bins: usize, bands: usize) -> Vec<(usize, usize)> {
    let bands = bands.clamp(1, bins.max(1));
    (0..bands)
        .map(|b| {
            let lo = b * bins / bands;
            (lo, ((b + 1) * bins / bands).max(lo + 1))
        })
        .collect()
}

/// Averages contiguous, equal-width groups of bins into `bands` columns.
pub fn pool_bands(spec: &DMatrix<f64>, bands: usize) -> DMatrix<f64> {
    let ranges = band_ranges(spec.ncols(), bands);
    let mut out = DMatrix::zeros(spec.nrows(), ranges.len());
    for (b, &(lo, hi)) in ranges.iter().enumerate() {
        for r in 0..spec.nrows() {
            out[(r, b)] = spec.row(r).columns(lo, hi - lo).sum() / (hi - lo) as f64;
        }
    }
    out
}
