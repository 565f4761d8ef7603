//! Motion evaluation: distribution metrics (Fréchet, Wasserstein, diversity),
//! accuracy metrics, and the trained dual-encoder retrieval metrics
//! (R-Precision@K, multimodal distance) with their contrastive training loop.

mod diversity;
mod encoder;
mod gaussian;
mod train;
mod wasserstein;

pub use diversity::diversity;
pub use encoder::{
    encode_motion, encode_text, infonce_loss, infonce_loss_and_grad, mmd, r_precision,
    similarity_matrix, softmax, BatchActivations, Dims, EmbeddingBatch, RetrievalModel, ZScore,
    EMBED_DIM, HIDDEN_DIM, TEXT_BINS,
};
pub use gaussian::{fit_gaussian, frechet_distance, GaussianStats};
pub use train::{train_encoder, EpochRecord, TrainConfig, TrainHistory};
pub use wasserstein::{wasserstein_1d, wasserstein_dist};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("eigendecomposition failed")]
    EigenFailure,
    #[error("sample set is empty")]
    EmptySet,
    #[error("embedding batch shape mismatch")]
    ShapeMismatch,
    #[error("K must satisfy 1 <= K <= N, got {0}")]
    BadK(usize),
    #[error("contrastive batch needs at least 2 pairs")]
    DegenerateBatch,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("embedding rows must be unit-normalized")]
    NotNormalized,
}

/// Full metric report serialized by the CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fid: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wdist: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diversity: Option<DiversityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_precision: Option<RPrecisionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mmd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mae: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
}

/// Generated-set diversity reported against the reference set's own value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiversityReport {
    pub gen: f64,
    pub gt: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RPrecisionReport {
    pub top1: f64,
    pub top2: f64,
    pub top3: f64,
}
