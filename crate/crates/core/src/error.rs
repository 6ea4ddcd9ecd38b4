// SPDX-License-Identifier: MIT OR Apache-2.0

//! Crate-wide error type.
//!
//! One enum covers every module; each variant corresponds to one diagnostic
//! class so the CLI can map failures onto distinct exit codes.

use std::path::PathBuf;

/// Errors produced anywhere in the laboratory.
#[derive(Debug, thiserror::Error)]
pub enum LabError {
    /// A model or experiment configuration is invalid.
    #[error("configuration error: {0}")]
    Config(String),

    /// A sequence does not fit into the model context.
    #[error("sequence of length {len} exceeds the limit of {max}")]
    Length {
        /// Offending length.
        len: usize,
        /// Allowed maximum.
        max: usize,
    },

    /// A token id or surface word is outside the vocabulary.
    #[error("vocabulary error: {0}")]
    Vocabulary(String),

    /// An index (position, layer, head, token) is out of range.
    #[error("index error: {0}")]
    Index(String),

    /// Tensor shapes disagree.
    #[error("shape error: {0}")]
    Shape(String),

    /// Training diverged.
    #[error("training diverged at step {step}: loss = {loss}")]
    Training {
        /// Step at which the loss became non-finite.
        step: usize,
        /// The offending loss value.
        loss: f64,
    },

    /// A question template is malformed.
    #[error("template error: {0}")]
    Template(String),

    /// Triple corruption could not produce a false object.
    #[error("corruption error: {0}")]
    Corruption(String),

    /// Surface text could not be tokenized.
    #[error("tokenization error: {0}")]
    Tokenization(String),

    /// Invalid input to a metric or evaluation routine.
    #[error("input error: {0}")]
    Input(String),

    /// A metric could not be evaluated (e.g. single-class AUC).
    #[error("evaluation error: {0}")]
    Evaluation(String),

    /// A token partition used by flow aggregation is empty.
    #[error("partition error: {0}")]
    Partition(String),

    /// The clean / masked / patched protocol was violated.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// No head passed the localization threshold.
    #[error("empty localization: no head reached tau = {tau} on any of {instances} instances (max influence {max_influence})")]
    EmptyLocalization {
        /// Threshold used.
        tau: f64,
        /// Number of instances scanned.
        instances: usize,
        /// Largest influence observed.
        max_influence: f64,
    },

    /// A required upstream artifact is missing.
    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    /// A persisted file failed validation.
    #[error("format error in {path}: {reason}")]
    Format {
        /// File or stream name.
        path: String,
        /// What was wrong.
        reason: String,
    },

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// JSON (de)serialization failure.
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl LabError {
    /// Process exit status for this diagnostic class (2 is left to usage errors).
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) => 3,
            LabError::MissingArtifact(_) => 4,
            LabError::Format { .. } | LabError::Json(_) => 5,
            LabError::Io(_) => 6,
            LabError::Vocabulary(_)
            | LabError::Tokenization(_)
            | LabError::Template(_)
            | LabError::Corruption(_)
            | LabError::Length { .. } => 7,
            LabError::Index(_) | LabError::Shape(_) | LabError::Input(_) => 8,
            LabError::Training { .. } => 9,
            LabError::Protocol(_) | LabError::Partition(_) | LabError::Evaluation(_) => 10,
            LabError::EmptyLocalization { .. } => 11,
        }
    }

    /// Wraps an error with the instance it occurred on.
    pub fn with_instance(self, instance: &str) -> Self {
        match self {
            LabError::Protocol(msg) => LabError::Protocol(format!("instance {instance}: {msg}")),
            LabError::Index(msg) => LabError::Index(format!("instance {instance}: {msg}")),
            other => other,
        }
    }
}

/// Convenience alias.
pub type Result<T> = std::result::Result<T, LabError>;
