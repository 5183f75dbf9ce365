//! Dual-encoder text-trajectory matcher.
//!
//! Tracks are cut into overlapping patches and encoded by a small
//! transformer; text token embeddings pass through a residual MLP and a
//! width-3 convolution. Both sides are pooled into a shared unit-norm space,
//! and their token sequences meet in a scaled cross-similarity matrix whose
//! maximum is the pair's evidence score. Training minimizes a weighted sum of
//! a multiple-instance loss over evidence scores and a symmetric InfoNCE loss
//! over pooled embeddings, with gradients from [`tape`].

pub mod checkpoint;
pub mod config;
pub mod loss;
pub mod model;
pub mod rank;
pub mod tape;
pub mod tensor;
pub mod train;

use thiserror::Error;

pub use config::{EvidencePooling, LossConfig, MatcherConfig, PatchConfig, TrainConfig};
pub use model::{patch_count, Matcher};
pub use tensor::Mat;

#[derive(Debug, Error)]
pub enum MatcherError {
    #[error("track of length {len} is shorter than the patch length {patch}")]
    TrackTooShort { len: usize, patch: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{what}: expected {expected}, found {found}")]
    DimMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("row {0} is not unit-normalized")]
    NotNormalized(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
