//! Word-context encoding, normalization and dimensionality reduction.

pub mod features;
pub mod halves;
pub mod pca;
pub mod store;
pub mod text;
pub mod zscore;

pub use features::{
    fit_corpus, fit_pca_models, frame_features, frame_features_per_recording, ingest, project_bundles,
    standardize_and_split, FeatureBundle, FeatureConfig, FeatureModel, FittedCorpus, IngestReport, IngestedCorpus,
    Modality, PerModality, QueryFeaturizer, QuerySegment, RecordingMeta, SegmentHalves, SegmentMeta,
    FEATURE_MODEL_VERSION,
};
pub use halves::{flatten_time_major, halve_keep_first, halve_keep_second};
pub use pca::{pca_fit, PcaModel};
pub use text::{encode_text_context, ContextEncoder, TextEncoders};
pub use zscore::ZScore;
