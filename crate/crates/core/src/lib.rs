//! Text-to-facial-animation toolkit: turns natural-language expression
//! scripts into 61-channel ARKit blendshape keyframes through an external
//! LLM endpoint, renders them into interpolated animation curves, and
//! evaluates generated motion with distribution, accuracy, and trained
//! retrieval metrics.
//!
//! Modules:
//! - [`model`]: the channel registry, coefficient vectors, scripts.
//! - [`prompt`]: script parsing and prompt composition.
//! - [`gateway`]: the chat-completion client and output repair ladder.
//! - [`pipeline`]: standardize → confirm → per-keyframe generation.
//! - [`animation`]: timing, interpolation, smoothing, Live Link CSV.
//! - [`eval`]: Fréchet/Wasserstein/diversity metrics and the dual-encoder
//!   retrieval model with its contrastive training loop.
//! - [`dataset`]: JSONL corpus loading, splitting, annotation, statistics.

pub mod animation;
pub mod dataset;
pub mod eval;
pub mod gateway;
pub mod model;
pub mod pipeline;
pub mod prompt;

pub use model::{
    registry, validate_coeffs, ChannelRegistry, CoeffVector, FrameErrors, KeyframeSpec,
    MotionKeyframeSet, Script, ValidatePolicy, CHANNEL_COUNT, REGISTRY_VERSION,
};
