//! Pipeline configuration file.

use std::path::{Path, PathBuf};

use beatgraph::embed::FeatureConfig;
use beatgraph::index::HnswParams;
use beatgraph::synth::GenerationConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Where word-context vectors come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextEncoderChoice {
    /// Seeded hash-based word vectors and projections.
    Reference,
    /// `text_context.jsonl` in each recording directory, one vector per
    /// context position (position 0 before any word).
    Precomputed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphSection {
    pub nn_count: usize,
}

impl Default for GraphSection {
    fn default() -> Self {
        Self {
            nn_count: beatgraph::graph::DEFAULT_NN_COUNT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub corpus: Option<PathBuf>,
    pub out: PathBuf,
    pub text_encoder: TextEncoderChoice,
    pub features: FeatureConfig,
    pub index: HnswParams,
    pub graph: GraphSection,
    pub generation: GenerationConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            out: PathBuf::from("out"),
            text_encoder: TextEncoderChoice::Reference,
            features: FeatureConfig::default(),
            index: HnswParams::default(),
            graph: GraphSection::default(),
            generation: GenerationConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.features.validate()?;
        self.index.validate()?;
        self.generation.validate()?;
        if self.graph.nn_count == 0 {
            return Err(CliError::Config("graph.nn_count must be at least 1".into()));
        }
        if (self.features.segment_seconds - self.generation.segment_seconds).abs() > 1e-12 {
            return Err(CliError::Config(format!(
                "features.segment_seconds ({}) and generation.segment_seconds ({}) differ",
                self.features.segment_seconds, self.generation.segment_seconds
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
