//! Graph-based co-speech beat gesture synthesis.
//!
//! The crate turns a corpus of tracked speaker motion, audio and word timings
//! into a searchable gesture graph, then walks that graph to produce beat
//! gestures for new speech:
//!
//! * [`corpus`] ingests recordings, cuts them into half-overlapping windows and
//!   computes raw per-frame features (word-aligned audio envelopes, motion
//!   derivatives, spectrograms).
//! * [`embed`] encodes word context, normalizes features and reduces each
//!   modality with PCA.
//! * [`index`] is an in-process HNSW index with an exact brute-force oracle.
//! * [`graph`] builds the immutable gesture graph from nearest-neighbor and
//!   natural-continuation edges.
//! * [`synth`] runs the weighted multimodal path search, stitches the chosen
//!   segments and blends pre-captured iconic clips into the timeline.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod embed;
pub mod error;
pub mod graph;
pub mod index;
pub mod linalg;
pub mod synth;

pub use error::{Error, Result};
