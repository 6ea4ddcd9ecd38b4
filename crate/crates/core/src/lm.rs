// SPDX-License-Identifier: MIT OR Apache-2.0

//! Question answering on top of a checkpoint: prompt formatting plus decoding.

use serde::{Deserialize, Serialize};

use crate::dataset::question::answer_prompt;
use crate::dataset::select::QuestionAnswerer;
use crate::error::Result;
use crate::model::{generate, Checkpoint, Generation, LogitSource, Strategy};

/// How answers are decoded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Decoding {
    pub strategy: Strategy,
    pub max_new: usize,
}

impl Default for Decoding {
    fn default() -> Self {
        Self {
            strategy: Strategy::Beam { width: 5 },
            max_new: 4,
        }
    }
}

/// Decodes an answer to `question` from any logit source sharing `model`'s vocabulary.
pub fn answer_with<S: LogitSource + ?Sized>(
    source: &S,
    model: &Checkpoint,
    question: &str,
    decoding: Decoding,
) -> Result<Generation> {
    let prompt = answer_prompt(question, &model.vocab)?;
    generate(source, &prompt, decoding.strategy, decoding.max_new, Some(model.vocab.eos()))
}

impl Checkpoint {
    pub fn answer(&self, question: &str, decoding: Decoding) -> Result<Generation> {
        answer_with(&self.weights, self, question, decoding)
    }

    /// Answer text without special tokens.
    pub fn answer_text(&self, question: &str, decoding: Decoding) -> Result<String> {
        let g = self.answer(question, decoding)?;
        self.vocab.decode_content(&g.ids)
    }
}

/// A checkpoint paired with a decoding strategy.
pub struct Answerer<'a> {
    pub model: &'a Checkpoint,
    pub decoding: Decoding,
}

impl QuestionAnswerer for Answerer<'_> {
    fn answer(&self, question: &str) -> Result<String> {
        self.model.answer_text(question, self.decoding)
    }
}
