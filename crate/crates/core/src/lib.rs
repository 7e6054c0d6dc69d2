//! Multi-stream, dual-branch convolutional models for group activity
//! recognition.
//!
//! Each modality (RGB frame, stacked optical flow, warped flow, posemap) is
//! handled by its own [`stream::StreamModel`]. A stream predicts individual
//! actions from per-person feature-map regions, group activity from the
//! max-pooled person representations, and group activity from the whole
//! scene. Stream outputs are combined by late [`fusion`].

pub mod backbone;
pub mod config;
pub mod data_model;
pub mod datasets;
pub mod error;
pub mod fusion;
pub mod io_util;
pub mod metrics;
pub mod modality;
pub mod nn;
pub mod pipeline;
pub mod report;
pub mod resample;
pub mod stream;
pub mod train;

pub use data_model::{
    validate_clip, BoundingBox, Clip, LabelSpace, LossWeights, ModalityKind, ModalityStack, PersonAnn, ScoreRecord,
    StreamPrediction, ValidatedClip,
};
pub use error::{Error, Result};
