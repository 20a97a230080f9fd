//! Synthesis hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where step candidates come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateScope {
    /// Out-neighbors of the previous node, so consecutive choices stay
    /// connected by a graph edge.
    Neighborhood,
    /// Every node in the graph.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weights {
    pub gesture: f64,
    pub audio: f64,
    pub text: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            gesture: 4.0,
            audio: 2.0,
            text: 1.0,
        }
    }
}

impl Weights {
    pub fn scaled(self, c: f64) -> Self {
        Self {
            gesture: self.gesture * c,
            audio: self.audio * c,
            text: self.text * c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationConfig {
    pub segment_seconds: f64,
    /// Candidate heads per step.
    pub candidates: usize,
    /// Lookahead depth.
    pub depth: usize,
    /// Edges followed per expansion.
    pub edges_per_expansion: usize,
    /// Sampling pool size.
    pub top_k: usize,
    pub weights: Weights,
    pub temperature: f64,
    pub seed: u64,
    pub crossfade_seconds: f64,
    pub scope: CandidateScope,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            segment_seconds: crate::corpus::DEFAULT_SEGMENT_SECONDS,
            candidates: 16,
            depth: 3,
            edges_per_expansion: 5,
            top_k: 4,
            weights: Weights::default(),
            temperature: 1.0,
            seed: 0,
            crossfade_seconds: 0.25,
            scope: CandidateScope::Neighborhood,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.candidates == 0 || self.edges_per_expansion == 0 || self.top_k == 0 {
            return Err(Error::Config(
                "candidates, edges_per_expansion and top_k must be at least 1".into(),
            ));
        }
        let w = [self.weights.gesture, self.weights.audio, self.weights.text];
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().all(|x| *x == 0.0) {
            return Err(Error::Config(format!(
                "weights must be finite, non-negative and not all zero, got {w:?}"
            )));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.segment_seconds > 0.0) {
            return Err(Error::Config("segment_seconds must be positive".into()));
        }
        if !(self.crossfade_seconds >= 0.0) || !self.crossfade_seconds.is_finite() {
            return Err(Error::Config("crossfade_seconds must be non-negative".into()));
        }
        Ok(())
    }
}
