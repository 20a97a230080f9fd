//! Corpus featurization from recordings to reduced per-segment vectors.
//!
//! The stages mirror the command-line pipeline:
//!
//! 1. [`ingest`] segments recordings, filters unusable windows and computes
//!    raw features (band-pooled log spectrogram, audio embedding, envelope,
//!    motion derivatives).
//! 2. [`frame_features`] assembles the per-frame gesture, audio and text
//!    matrices.
//! 3. [`standardize_and_split`] fits global z-scores and splits each window
//!    into its first and second half.
//! 4. [`fit_pca_models`] and [`project_bundles`] reduce each modality.
//!
//! [`QueryFeaturizer`] applies the fitted model to new speech.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::halves::{flatten_time_major, halve_keep_first, halve_keep_second};
use super::pca::{pca_fit, PcaModel};
use super::text::{text_frame_features, ContextEncoder};
use super::zscore::{ZScore, ZScoreAccumulator};
use crate::corpus::{
    alignment_envelope, apply_envelope, compute_raw_features, segment_recording, words_in_window, AudioEncoder,
    AudioTrack, ClipFilter, RawFeatures, Recording, Stft, WindowGeometry, WordTiming, TARGET_SAMPLE_RATE,
};
use crate::error::{Error, Result};

pub const FEATURE_MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub segment_seconds: f64,
    /// PCA output dimension per modality (clamped by the corpus size).
    pub target_dim: usize,
    pub spectrogram_bands: usize,
    pub tx_short: usize,
    pub tx_long: usize,
    pub word_dim: usize,
    pub sequence_dim: usize,
    pub encoder_seed: u64,
    pub filter: ClipFilter,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            segment_seconds: crate::corpus::DEFAULT_SEGMENT_SECONDS,
            target_dim: 256,
            spectrogram_bands: 32,
            tx_short: 8,
            tx_long: 32,
            word_dim: 32,
            sequence_dim: 16,
            encoder_seed: 0,
            filter: ClipFilter::default(),
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.segment_seconds > 0.0) {
            return Err(Error::Config("segment_seconds must be positive".into()));
        }
        if self.target_dim == 0 || self.spectrogram_bands == 0 || self.word_dim == 0 || self.sequence_dim == 0 {
            return Err(Error::Config(
                "target_dim, spectrogram_bands, word_dim and sequence_dim must be positive".into(),
            ));
        }
        if self.tx_short == 0 || self.tx_short >= self.tx_long {
            return Err(Error::Config(format!(
                "text horizons need 0 < tx_short < tx_long, got {} and {}",
                self.tx_short, self.tx_long
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Gesture,
    Audio,
    Text,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Gesture, Modality::Audio, Modality::Text];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Gesture => "gesture",
            Modality::Audio => "audio",
            Modality::Text => "text",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerModality<T> {
    pub gesture: T,
    pub audio: T,
    pub text: T,
}

impl<T> PerModality<T> {
    pub fn get(&self, m: Modality) -> &T {
        match m {
            Modality::Gesture => &self.gesture,
            Modality::Audio => &self.audio,
            Modality::Text => &self.text,
        }
    }

    pub fn try_from_fn(mut f: impl FnMut(Modality) -> Result<T>) -> Result<Self> {
        Ok(Self {
            gesture: f(Modality::Gesture)?,
            audio: f(Modality::Audio)?,
            text: f(Modality::Text)?,
        })
    }
}

/// Transcript and length of an ingested recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub source_id: String,
    pub fps: f64,
    pub frames: usize,
    pub words: Vec<WordTiming>,
}

/// Identity and placement of one kept window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMeta {
    pub clip_id: String,
    pub source_id: String,
    pub segment_index: usize,
    pub start_frame: usize,
    pub frames: usize,
    pub fps: f64,
    pub joints: usize,
    /// Clipped to the window, relative frames.
    pub words: Vec<WordTiming>,
    pub mean_confidence: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub recordings: usize,
    pub windows: usize,
    pub kept: usize,
    pub dropped_low_confidence: usize,
    pub dropped_static: usize,
    /// Largest pooled log-magnitude value over kept windows.
    pub spectrogram_max: f64,
}

#[derive(Debug, Clone)]
pub struct IngestedSegment {
    pub meta: SegmentMeta,
    pub raw: RawFeatures,
}

#[derive(Debug, Clone)]
pub struct IngestedCorpus {
    pub recordings: Vec<RecordingMeta>,
    pub segments: Vec<IngestedSegment>,
    pub report: IngestReport,
}

struct RecordingIngest {
    meta: RecordingMeta,
    segments: Vec<IngestedSegment>,
    windows: usize,
    dropped_low_confidence: usize,
    dropped_static: usize,
}

fn ingest_recording(rec: &Recording, cfg: &FeatureConfig, audio_encoder: &dyn AudioEncoder) -> Result<RecordingIngest> {
    let segments = segment_recording(rec, cfg.segment_seconds)?;
    let frames = rec.frames();
    let stft = Stft::new(rec.audio.sample_rate(), rec.fps)?;
    let spec = stft.log_magnitude_bands(&rec.audio, frames, cfg.spectrogram_bands)?;
    let emb = audio_encoder.encode(&rec.audio, rec.fps, frames);
    if emb.shape() != (frames, audio_encoder.output_dim()) {
        return Err(Error::DimensionMismatch {
            context: "audio encoder output",
            expected: audio_encoder.output_dim(),
            actual: emb.ncols(),
        });
    }
    let mut out = RecordingIngest {
        meta: RecordingMeta {
            source_id: rec.source_id.clone(),
            fps: rec.fps,
            frames,
            words: rec.words.clone(),
        },
        segments: Vec::new(),
        windows: segments.len(),
        dropped_low_confidence: 0,
        dropped_static: 0,
    };
    for seg in &segments {
        if seg.mean_confidence.is_some_and(|c| c < cfg.filter.min_confidence) {
            out.dropped_low_confidence += 1;
            continue;
        }
        if !cfg.filter.accepts(seg) {
            out.dropped_static += 1;
            continue;
        }
        let raw = compute_raw_features(seg, &spec, &emb)?;
        out.segments.push(IngestedSegment {
            meta: SegmentMeta {
                clip_id: seg.clip.id.clone(),
                source_id: seg.clip.source_id.clone(),
                segment_index: seg.segment_index,
                start_frame: seg.clip.start_frame,
                frames: seg.clip.len(),
                fps: seg.clip.fps,
                joints: seg.clip.joints(),
                words: seg.words.clone(),
                mean_confidence: seg.mean_confidence,
            },
            raw,
        });
    }
    Ok(out)
}

/// Segments, filters and computes raw features for every recording.
pub fn ingest(
    recordings: &[Recording],
    cfg: &FeatureConfig,
    audio_encoder: &dyn AudioEncoder,
) -> Result<IngestedCorpus> {
    cfg.validate()?;
    if recordings.is_empty() {
        return Err(Error::Empty("no recordings"));
    }
    let mut ids: Vec<&str> = recordings.iter().map(|r| r.source_id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::InvalidInput(format!("duplicate recording id {}", w[0])));
    }
    let parts: Vec<RecordingIngest> = recordings
        .par_iter()
        .map(|rec| ingest_recording(rec, cfg, audio_encoder))
        .collect::<Result<_>>()?;

    let mut report = IngestReport {
        recordings: recordings.len(),
        ..IngestReport::default()
    };
    let mut metas = Vec::with_capacity(parts.len());
    let mut segments = Vec::new();
    for part in parts {
        report.windows += part.windows;
        report.dropped_low_confidence += part.dropped_low_confidence;
        report.dropped_static += part.dropped_static;
        metas.push(part.meta);
        segments.extend(part.segments);
    }
    report.kept = segments.len();
    report.spectrogram_max = segments
        .iter()
        .map(|s| s.raw.audio_spectrogram.max())
        .fold(0.0, f64::max);
    log::info!(
        "ingested {} recordings: {} windows, {} kept, {} low confidence, {} static",
        report.recordings,
        report.windows,
        report.kept,
        report.dropped_low_confidence,
        report.dropped_static
    );
    Ok(IngestedCorpus {
        recordings: metas,
        segments,
        report,
    })
}

fn hstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// Per-frame gesture matrix: joint positions next to their derivatives.
pub fn gesture_frames(raw: &RawFeatures) -> DMatrix<f64> {
    hstack(&raw.gesture_positions, &raw.gesture_derivs)
}

/// Per-frame audio matrix: envelope-weighted spectrogram bands (scaled by
/// the corpus maximum) next to the envelope-weighted audio embedding.
pub fn audio_frames(
    processed_spectrogram: &DMatrix<f64>,
    processed_embedding: &DMatrix<f64>,
    spectrogram_max: f64,
) -> DMatrix<f64> {
    let mut spec = processed_spectrogram.clone();
    crate::corpus::spectrogram::normalize_max(&mut spec, spectrogram_max);
    hstack(&spec, processed_embedding)
}

/// Per-frame matrices for one window.
#[derive(Debug, Clone)]
pub struct FrameFeatures {
    pub meta: SegmentMeta,
    pub frames: PerModality<DMatrix<f64>>,
}

pub fn frame_features(corpus: &IngestedCorpus, text_encoder: &dyn ContextEncoder) -> Result<Vec<FrameFeatures>> {
    frame_features_per_recording(corpus, &vec![text_encoder; corpus.recordings.len()])
}

/// Like [`frame_features`] with one text encoder per recording, in
/// `corpus.recordings` order (externally computed context vectors).
pub fn frame_features_per_recording(
    corpus: &IngestedCorpus,
    text_encoders: &[&dyn ContextEncoder],
) -> Result<Vec<FrameFeatures>> {
    if text_encoders.len() != corpus.recordings.len() {
        return Err(Error::DimensionMismatch {
            context: "text encoders per recording",
            expected: corpus.recordings.len(),
            actual: text_encoders.len(),
        });
    }
    let text: Vec<(String, DMatrix<f64>)> = corpus
        .recordings
        .par_iter()
        .zip(text_encoders.par_iter())
        .map(|(r, enc)| Ok((r.source_id.clone(), text_frame_features(&r.words, r.frames, *enc)?)))
        .collect::<Result<_>>()?;
    let max = corpus.report.spectrogram_max;
    corpus
        .segments
        .par_iter()
        .map(|seg| {
            let (_, rec_text) = text
                .iter()
                .find(|(id, _)| *id == seg.meta.source_id)
                .ok_or_else(|| Error::Invariant(format!("segment {} has no recording", seg.meta.clip_id)))?;
            Ok(FrameFeatures {
                meta: seg.meta.clone(),
                frames: PerModality {
                    gesture: gesture_frames(&seg.raw),
                    audio: audio_frames(&seg.raw.processed_spectrogram, &seg.raw.processed_embedding, max),
                    text: rec_text.rows(seg.meta.start_frame, seg.meta.frames).into_owned(),
                },
            })
        })
        .collect()
}

/// Standardized, flattened half windows for one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentHalves {
    pub meta: SegmentMeta,
    pub first: PerModality<Vec<f64>>,
    pub second: PerModality<Vec<f64>>,
}

/// Fits a z-score per frame-level feature over every frame of every window,
/// then splits each standardized window into halves.
pub fn standardize_and_split(frames: &[FrameFeatures]) -> Result<(PerModality<ZScore>, Vec<SegmentHalves>)> {
    let first = frames.first().ok_or(Error::Empty("no segments to standardize"))?;
    let window = first.meta.frames;
    for f in frames {
        if f.meta.frames != window {
            return Err(Error::InvalidInput(format!(
                "segment {} has {} frames, expected {window}; recordings must share a frame rate",
                f.meta.clip_id, f.meta.frames
            )));
        }
    }
    let zscore = PerModality::try_from_fn(|m| {
        let dim = first.frames.get(m).ncols();
        let mut acc = ZScoreAccumulator::new(dim);
        for f in frames {
            acc.push_rows(f.frames.get(m))?;
        }
        acc.finish()
    })?;
    let halves = frames
        .par_iter()
        .map(|f| {
            let standardized = PerModality::try_from_fn(|m| zscore.get(m).apply(f.frames.get(m)))?;
            Ok(SegmentHalves {
                meta: f.meta.clone(),
                first: PerModality::try_from_fn(|m| Ok(flatten_time_major(&halve_keep_first(standardized.get(m)))))?,
                second: PerModality::try_from_fn(|m| Ok(flatten_time_major(&halve_keep_second(standardized.get(m)))))?,
            })
        })
        .collect::<Result<_>>()?;
    Ok((zscore, halves))
}

/// Fits one PCA per modality on the first-half vectors.
pub fn fit_pca_models(halves: &[SegmentHalves], target_dim: usize) -> Result<PerModality<PcaModel>> {
    if halves.is_empty() {
        return Err(Error::Empty("no segments to fit"));
    }
    let fit = |m: Modality| -> Result<PcaModel> {
        let dim = halves[0].first.get(m).len();
        let mut data = DMatrix::zeros(halves.len(), dim);
        for (r, h) in halves.iter().enumerate() {
            let v = h.first.get(m);
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "half-window vector",
                    expected: dim,
                    actual: v.len(),
                });
            }
            for (c, x) in v.iter().enumerate() {
                data[(r, c)] = *x;
            }
        }
        let model = pca_fit(&data, target_dim)?;
        if model.clamped() {
            log::warn!(
                "{} pca: requested {} components, corpus supports {}",
                m.name(),
                target_dim,
                model.output_dim()
            );
        }
        Ok(model)
    };
    let results: Vec<Result<PcaModel>> = Modality::ALL.par_iter().map(|&m| fit(m)).collect();
    let mut it = results.into_iter();
    Ok(PerModality {
        gesture: it.next().expect("three modalities")?,
        audio: it.next().expect("three modalities")?,
        text: it.next().expect("three modalities")?,
    })
}

fn to_f32(v: Vec<f64>) -> Vec<f32> {
    v.into_iter().map(|x| x as f32).collect()
}

/// Reduced vectors for one corpus window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBundle {
    pub clip_id: String,
    pub source_id: String,
    pub segment_index: usize,
    pub start_frame: usize,
    /// First-half gesture.
    pub gesture: Vec<f32>,
    /// Second-half gesture through the same projection.
    pub gesture_tail: Vec<f32>,
    pub audio: Vec<f32>,
    pub text: Vec<f32>,
}

impl FeatureBundle {
    /// `gesture ⊕ audio ⊕ text`.
    pub fn combined(&self) -> Vec<f32> {
        crate::linalg::concat(&[&self.gesture, &self.audio, &self.text])
    }
}

pub fn project_bundles(halves: &[SegmentHalves], pca: &PerModality<PcaModel>) -> Result<Vec<FeatureBundle>> {
    halves
        .par_iter()
        .map(|h| {
            Ok(FeatureBundle {
                clip_id: h.meta.clip_id.clone(),
                source_id: h.meta.source_id.clone(),
                segment_index: h.meta.segment_index,
                start_frame: h.meta.start_frame,
                gesture: to_f32(pca.gesture.project(&h.first.gesture)?),
                gesture_tail: to_f32(pca.gesture.project(&h.second.gesture)?),
                audio: to_f32(pca.audio.project(&h.first.audio)?),
                text: to_f32(pca.text.project(&h.first.text)?),
            })
        })
        .collect()
}

/// Everything needed to featurize new speech consistently with the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureModel {
    pub version: u32,
    pub config: FeatureConfig,
    pub fps: f64,
    pub window_frames: usize,
    pub joints: usize,
    pub spectrogram_max: f64,
    pub audio_encoder: String,
    pub text_encoder: String,
    pub zscore: PerModality<ZScore>,
    pub pca: PerModality<PcaModel>,
}

impl FeatureModel {
    pub fn dims(&self) -> PerModality<usize> {
        PerModality {
            gesture: self.pca.gesture.output_dim(),
            audio: self.pca.audio.output_dim(),
            text: self.pca.text.output_dim(),
        }
    }

    /// Sidecar holding PCA means and components as little-endian `f64`.
    pub fn matrices_path(json_path: &Path) -> PathBuf {
        json_path.with_extension("bin")
    }

    /// Writes `json_path` plus the binary sidecar.
    pub fn save(&self, json_path: &Path) -> Result<()> {
        let mut header = self.clone();
        for m in Modality::ALL {
            let p = match m {
                Modality::Gesture => &mut header.pca.gesture,
                Modality::Audio => &mut header.pca.audio,
                Modality::Text => &mut header.pca.text,
            };
            p.mean.clear();
            p.components.clear();
        }
        let json = serde_json::to_vec_pretty(&header).map_err(|e| Error::format(json_path, e.to_string()))?;
        std::fs::write(json_path, json).map_err(|e| Error::io(json_path, e))?;

        let bin = Self::matrices_path(json_path);
        let file = File::create(&bin).map_err(|e| Error::io(&bin, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(&bin, e);
        for m in Modality::ALL {
            let p = self.pca.get(m);
            for x in p.mean.iter().chain(&p.components) {
                w.write_f64::<LittleEndian>(*x).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn load(json_path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(json_path).map_err(|e| Error::io(json_path, e))?;
        let mut model: FeatureModel =
            serde_json::from_str(&text).map_err(|e| Error::format(json_path, e.to_string()))?;
        if model.version != FEATURE_MODEL_VERSION {
            return Err(Error::format(
                json_path,
                format!(
                    "feature model version {} (expected {FEATURE_MODEL_VERSION})",
                    model.version
                ),
            ));
        }
        let bin = Self::matrices_path(json_path);
        let file = File::open(&bin).map_err(|e| Error::io(&bin, e))?;
        let mut r = BufReader::new(file);
        for m in Modality::ALL {
            let p = match m {
                Modality::Gesture => &mut model.pca.gesture,
                Modality::Audio => &mut model.pca.audio,
                Modality::Text => &mut model.pca.text,
            };
            let d = p.input_dim;
            let k = p.explained_variance.len();
            p.mean = read_f64s(&mut r, d).map_err(|e| Error::format(&bin, e.to_string()))?;
            p.components = read_f64s(&mut r, k * d).map_err(|e| Error::format(&bin, e.to_string()))?;
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest).map_err(|e| Error::io(&bin, e))?;
        if !rest.is_empty() {
            return Err(Error::format(&bin, format!("{} trailing bytes", rest.len())));
        }
        Ok(model)
    }
}

fn read_f64s(r: &mut impl Read, n: usize) -> std::io::Result<Vec<f64>> {
    let mut out = vec![0.0; n];
    r.read_f64_into::<LittleEndian>(&mut out)?;
    Ok(out)
}

/// Result of featurizing a corpus end to end.
#[derive(Debug, Clone)]
pub struct FittedCorpus {
    pub model: FeatureModel,
    pub bundles: Vec<FeatureBundle>,
    pub report: IngestReport,
}

/// Runs every stage in memory.
pub fn fit_corpus(
    recordings: &[Recording],
    cfg: &FeatureConfig,
    audio_encoder: &dyn AudioEncoder,
    text_encoder: &dyn ContextEncoder,
) -> Result<FittedCorpus> {
    let ingested = ingest(recordings, cfg, audio_encoder)?;
    let frames = frame_features(&ingested, text_encoder)?;
    let (zscore, halves) = standardize_and_split(&frames)?;
    let pca = fit_pca_models(&halves, cfg.target_dim)?;
    let bundles = project_bundles(&halves, &pca)?;
    let first = &ingested.segments[0].meta;
    let model = FeatureModel {
        version: FEATURE_MODEL_VERSION,
        config: cfg.clone(),
        fps: first.fps,
        window_frames: first.frames,
        joints: first.joints,
        spectrogram_max: ingested.report.spectrogram_max,
        audio_encoder: audio_encoder.id().to_string(),
        text_encoder: text_encoder.id(),
        zscore,
        pca,
    };
    Ok(FittedCorpus {
        model,
        bundles,
        report: ingested.report,
    })
}

/// Reduced audio and text vectors for the second half of one speech window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySegment {
    pub index: usize,
    pub start_frame: usize,
    pub audio: Vec<f32>,
    pub text: Vec<f32>,
}

/// Featurizes new speech with a fitted [`FeatureModel`].
pub struct QueryFeaturizer<'a> {
    model: &'a FeatureModel,
    audio_encoder: &'a dyn AudioEncoder,
    text_encoder: &'a dyn ContextEncoder,
    stft: Stft,
    geometry: WindowGeometry,
}

impl<'a> QueryFeaturizer<'a> {
    pub fn new(
        model: &'a FeatureModel,
        audio_encoder: &'a dyn AudioEncoder,
        text_encoder: &'a dyn ContextEncoder,
    ) -> Result<Self> {
        if audio_encoder.id() != model.audio_encoder || text_encoder.id() != model.text_encoder {
            return Err(Error::Config(format!(
                "encoders ({}, {}) differ from the ones the model was fit with ({}, {})",
                audio_encoder.id(),
                text_encoder.id(),
                model.audio_encoder,
                model.text_encoder
            )));
        }
        Ok(Self {
            model,
            audio_encoder,
            text_encoder,
            stft: Stft::new(TARGET_SAMPLE_RATE, model.fps)?,
            geometry: WindowGeometry::new(model.config.segment_seconds, model.fps)?,
        })
    }

    /// Frame count of a speech track at the model frame rate.
    pub fn frames_for(&self, audio: &AudioTrack) -> usize {
        let spf = crate::corpus::audio::samples_per_frame(audio.sample_rate(), self.model.fps);
        (audio.len() as f64 / spf).round() as usize
    }

    /// One query per window of the speech track, in time order.
    pub fn featurize(&self, audio: &AudioTrack, words: &[WordTiming]) -> Result<Vec<QuerySegment>> {
        let audio = if audio.sample_rate() == TARGET_SAMPLE_RATE {
            audio.clone()
        } else {
            audio.resample(TARGET_SAMPLE_RATE)
        };
        let frames = self.frames_for(&audio);
        let count = self.geometry.count(frames);
        if count == 0 {
            return Err(Error::InvalidInput(format!(
                "speech is {:.2}s, shorter than one {}s segment",
                audio.duration_s(),
                self.model.config.segment_seconds
            )));
        }
        for (i, w) in words.iter().enumerate() {
            if w.start_frame > w.end_frame || w.end_frame >= frames {
                return Err(Error::Alignment(format!(
                    "word {i} ({:?}) spans frames {}..={} outside {frames} speech frames",
                    w.word, w.start_frame, w.end_frame
                )));
            }
        }
        let spec = self
            .stft
            .log_magnitude_bands(&audio, frames, self.model.config.spectrogram_bands)?;
        let emb = self.audio_encoder.encode(&audio, self.model.fps, frames);
        let text = text_frame_features(words, frames, self.text_encoder)?;
        (0..count)
            .into_par_iter()
            .map(|index| {
                let start = self.geometry.start(index);
                let n = self.geometry.window;
                let env = alignment_envelope(&words_in_window(words, start, start + n), n)?;
                let audio_m = audio_frames(
                    &apply_envelope(&spec.rows(start, n).into_owned(), &env)?,
                    &apply_envelope(&emb.rows(start, n).into_owned(), &env)?,
                    self.model.spectrogram_max,
                );
                let audio_z = self.model.zscore.audio.apply(&audio_m)?;
                let text_z = self.model.zscore.text.apply(&text.rows(start, n).into_owned())?;
                Ok(QuerySegment {
                    index,
                    start_frame: start,
                    audio: to_f32(
                        self.model
                            .pca
                            .audio
                            .project(&flatten_time_major(&halve_keep_second(&audio_z)))?,
                    ),
                    text: to_f32(
                        self.model
                            .pca
                            .text
                            .project(&flatten_time_major(&halve_keep_second(&text_z)))?,
                    ),
                })
            })
            .collect()
    }
}
