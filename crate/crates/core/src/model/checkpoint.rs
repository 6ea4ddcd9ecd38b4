// SPDX-License-Identifier: MIT OR Apache-2.0

//! JSON checkpoint container.
//!
//! ```text
//! { "format": "premise-lab-checkpoint", "version": 1,
//!   "config": {...}, "vocabulary": [...],
//!   "tensors": [ { "name": "...", "shape": [r, c], "data": [row-major] }, ... ] }
//! ```
//!
//! Loading validates the tensor list against the manifest implied by the
//! config, so a truncated or reshaped file is rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::tokenizer::Vocabulary;
use super::weights::Weights;
use crate::error::{LabError, Result};
use crate::util::write_atomic;

pub const CHECKPOINT_FORMAT: &str = "premise-lab-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: ModelConfig,
    vocabulary: Vocabulary,
    tensors: Vec<TensorRecord>,
}

/// A model together with the vocabulary it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub weights: Weights,
    pub vocab: Vocabulary,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        let names = Weights::tensor_names(&self.weights.config);
        let shapes = Weights::expected_shapes(&self.weights.config);
        let tensors = self
            .weights
            .flat()
            .into_iter()
            .zip(names)
            .zip(shapes)
            .map(|((data, name), shape)| TensorRecord {
                name,
                shape,
                data: data.to_vec(),
            })
            .collect();
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.weights.config.clone(),
            vocabulary: self.vocab.clone(),
            tensors,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        let bad = |reason: String| LabError::Format {
            path: origin.to_string(),
            reason,
        };
        if file.format != CHECKPOINT_FORMAT {
            return Err(bad(format!("unexpected format tag {:?}", file.format)));
        }
        if file.version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {}", file.version)));
        }
        if file.vocabulary.len() != file.config.vocab_size {
            return Err(bad(format!(
                "vocabulary has {} tokens, config says {}",
                file.vocabulary.len(),
                file.config.vocab_size
            )));
        }
        let tensors = file
            .tensors
            .into_iter()
            .map(|t| (t.name, t.shape, t.data))
            .collect();
        let weights = Weights::from_tensors(&file.config, tensors)?;
        if !weights.is_finite() {
            return Err(bad("non-finite weight".into()));
        }
        Ok(Self {
            weights,
            vocab: file.vocabulary,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(LabError::MissingArtifact(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text, &path.display().to_string())
    }
}
