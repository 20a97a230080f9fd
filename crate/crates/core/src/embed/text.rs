//! Word-context encoding.
//!
//! For word position `i` the context `vr_i` stacks the word vectors of the
//! last `tx_short` tokens followed by the last `tx_long` tokens, left-padded
//! with zero vectors, and `vt_i` concatenates two sequence encoders applied to
//! `vr_i`. Position `i` counts the tokens already spoken, so `i = 0` has an
//! empty (all padding) history.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::corpus::WordTiming;
use crate::error::{Error, Result};

/// Maps a single token to a fixed-length vector.
pub trait WordEncoder: Send + Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn encode_word(&self, token: &str) -> Vec<f64>;
}

/// Maps a sequence of word vectors to a fixed-length vector.
pub trait SequenceEncoder: Send + Sync {
    fn id(&self) -> &str;
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn encode_sequence(&self, rows: &[Vec<f64>]) -> Vec<f64>;
}

/// Anything that can produce `vt_i` for a token stream.
pub trait ContextEncoder: Send + Sync {
    fn id(&self) -> String;
    fn output_dim(&self) -> usize;
    fn encode_context(&self, tokens: &[String], position: usize) -> Result<Vec<f64>>;
}

fn seeded_rng(seed: u64, tag: &[u8]) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(tag);
    let digest: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Seeded hash of the lowercased token to a pseudo-random unit vector.
#[derive(Debug, Clone)]
pub struct ReferenceWordEncoder {
    seed: u64,
    dim: usize,
}

impl ReferenceWordEncoder {
    pub fn new(seed: u64, dim: usize) -> Self {
        Self { seed, dim }
    }
}

impl WordEncoder for ReferenceWordEncoder {
    fn id(&self) -> &str {
        "reference-word-hash"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_word(&self, token: &str) -> Vec<f64> {
        let mut rng = seeded_rng(self.seed, token.to_lowercase().as_bytes());
        let mut v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        normalize(&mut v);
        v
    }
}

/// Mean of the word vectors through a seeded random projection, re-normalized.
#[derive(Debug, Clone)]
pub struct ReferenceSequenceEncoder {
    name: String,
    input_dim: usize,
    output_dim: usize,
    /// Row-major `output_dim × input_dim`.
    projection: Vec<f64>,
}

impl ReferenceSequenceEncoder {
    pub fn new(name: impl Into<String>, seed: u64, input_dim: usize, output_dim: usize) -> Self {
        let name = name.into();
        let mut rng = seeded_rng(seed, name.as_bytes());
        let scale = 1.0 / (input_dim.max(1) as f64).sqrt();
        let projection = (0..output_dim * input_dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .map(|x: f64| x * scale)
            .collect();
        Self {
            name,
            input_dim,
            output_dim,
            projection,
        }
    }
}

impl SequenceEncoder for ReferenceSequenceEncoder {
    fn id(&self) -> &str {
        &self.name
    }

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn encode_sequence(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        let mut mean = vec![0.0; self.input_dim];
        for row in rows {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        if !rows.is_empty() {
            mean.iter_mut().for_each(|m| *m /= rows.len() as f64);
        }
        let mut out: Vec<f64> = self
            .projection
            .chunks_exact(self.input_dim)
            .map(|w| w.iter().zip(&mean).map(|(a, b)| a * b).sum())
            .collect();
        normalize(&mut out);
        out
    }
}

/// Stacks the short and long history windows ending before `position`.
pub fn context_rows(
    tokens: &[String],
    position: usize,
    tx_short: usize,
    tx_long: usize,
    word_enc: &dyn WordEncoder,
) -> Vec<Vec<f64>> {
    let position = position.min(tokens.len());
    let mut rows = Vec::with_capacity(tx_short + tx_long);
    for horizon in [tx_short, tx_long] {
        let available = horizon.min(position);
        rows.extend(std::iter::repeat_n(vec![0.0; word_enc.dim()], horizon - available));
        rows.extend(
            tokens[position - available..position]
                .iter()
                .map(|t| word_enc.encode_word(t)),
        );
    }
    rows
}

/// `vt_i = seq_a(vr_i) ⊕ seq_b(vr_i)`.
pub fn encode_text_context(
    tokens: &[String],
    position: usize,
    tx_short: usize,
    tx_long: usize,
    word_enc: &dyn WordEncoder,
    seq_a: &dyn SequenceEncoder,
    seq_b: &dyn SequenceEncoder,
) -> Vec<f64> {
    let rows = context_rows(tokens, position, tx_short, tx_long, word_enc);
    let mut out = seq_a.encode_sequence(&rows);
    out.extend(seq_b.encode_sequence(&rows));
    out
}

/// Word encoder plus the two sequence encoders, with fixed horizons.
pub struct TextEncoders {
    pub word: Box<dyn WordEncoder>,
    pub seq_a: Box<dyn SequenceEncoder>,
    pub seq_b: Box<dyn SequenceEncoder>,
    pub tx_short: usize,
    pub tx_long: usize,
}

impl TextEncoders {
    pub fn reference(seed: u64, word_dim: usize, sequence_dim: usize, tx_short: usize, tx_long: usize) -> Result<Self> {
        if tx_short == 0 || tx_short >= tx_long {
            return Err(Error::Config(format!(
                "text horizons need 0 < tx_short < tx_long, got {tx_short} and {tx_long}"
            )));
        }
        Ok(Self {
            word: Box::new(ReferenceWordEncoder::new(seed, word_dim)),
            seq_a: Box::new(ReferenceSequenceEncoder::new(
                "reference-seq-a",
                seed,
                word_dim,
                sequence_dim,
            )),
            seq_b: Box::new(ReferenceSequenceEncoder::new(
                "reference-seq-b",
                seed,
                word_dim,
                sequence_dim,
            )),
            tx_short,
            tx_long,
        })
    }
}

impl ContextEncoder for TextEncoders {
    fn id(&self) -> String {
        format!(
            "{}+{}+{}/{}:{}",
            self.word.id(),
            self.seq_a.id(),
            self.seq_b.id(),
            self.tx_short,
            self.tx_long
        )
    }

    fn output_dim(&self) -> usize {
        self.seq_a.output_dim() + self.seq_b.output_dim()
    }

    fn encode_context(&self, tokens: &[String], position: usize) -> Result<Vec<f64>> {
        Ok(encode_text_context(
            tokens,
            position,
            self.tx_short,
            self.tx_long,
            self.word.as_ref(),
            self.seq_a.as_ref(),
            self.seq_b.as_ref(),
        ))
    }
}

/// Externally computed `vt_i` vectors, one per token position `0..=n_tokens`.
#[derive(Debug, Clone)]
pub struct PrecomputedContext {
    vectors: Vec<Vec<f64>>,
    dim: usize,
}

impl PrecomputedContext {
    pub fn new(vectors: Vec<Vec<f64>>) -> Result<Self> {
        let dim = vectors
            .first()
            .map(Vec::len)
            .ok_or(Error::Empty("precomputed text vectors"))?;
        if let Some((i, v)) = vectors.iter().enumerate().find(|(_, v)| v.len() != dim) {
            return Err(Error::InvalidInput(format!(
                "precomputed text vector {i} has length {}, expected {dim}",
                v.len()
            )));
        }
        Ok(Self { vectors, dim })
    }
}

impl ContextEncoder for PrecomputedContext {
    fn id(&self) -> String {
        "precomputed".into()
    }

    fn output_dim(&self) -> usize {
        self.dim
    }

    fn encode_context(&self, _tokens: &[String], position: usize) -> Result<Vec<f64>> {
        self.vectors.get(position).cloned().ok_or_else(|| {
            Error::InvalidInput(format!(
                "no precomputed text vector for position {position} ({} provided)",
                self.vectors.len()
            ))
        })
    }
}

/// Per-frame text features: frame `f` carries `vt_i` where `i` counts the
/// words that have started at or before `f`.
pub fn text_frame_features(words: &[WordTiming], frames: usize, encoder: &dyn ContextEncoder) -> Result<DMatrix<f64>> {
    let mut order: Vec<&WordTiming> = words.iter().collect();
    order.sort_by_key(|w| (w.start_frame, w.end_frame));
    let tokens: Vec<String> = order.iter().map(|w| w.word.clone()).collect();
    let dim = encoder.output_dim();
    let mut out = DMatrix::zeros(frames, dim);
    let mut position = 0;
    let mut current = encoder.encode_context(&tokens, 0)?;
    for f in 0..frames {
        let mut advanced = false;
        while position < order.len() && order[position].start_frame <= f {
            position += 1;
            advanced = true;
        }
        if advanced {
            current = encoder.encode_context(&tokens, position)?;
        }
        if current.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "text context vector",
                expected: dim,
                actual: current.len(),
            });
        }
        for (c, v) in current.iter().enumerate() {
            out[(f, c)] = *v;
        }
    }
    Ok(out)
}
