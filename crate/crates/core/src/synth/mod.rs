//! Gesture generation for new speech.
//!
//! [`search`] picks one graph node per query segment, [`timeline`] stitches
//! their stored windows into continuous motion and [`iconic`] splices
//! annotated iconic clips on top.

pub mod config;
pub mod iconic;
pub mod search;
pub mod timeline;

pub use config::{CandidateScope, GenerationConfig, Weights};
pub use iconic::{blend_iconic, IconicClip, IconicPlacement};
pub use search::{
    choose_nodes, generate_first, node_distance, path_score, sample_index, selection_probabilities, Fallback,
    ModalityVectors, PathCandidate, Session, StepRecord,
};
pub use timeline::{assemble, check_frames, generate, max_joint_displacement, stitch, MotionTimeline, Origin, Span};
