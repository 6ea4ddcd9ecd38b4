// SPDX-License-Identifier: MIT OR Apache-2.0

//! Constrained inference: selected heads stop writing at the false-object
//! positions. Their rows `i..j` are zeroed before the layer sum; keys and
//! values at those positions still feed every other head.

use std::collections::BTreeSet;
use std::ops::Range;

use ndarray::{Array1, Array2};

use crate::dataset::question::{answer_prompt, QuestionInstance};
use crate::error::{LabError, Result};
use crate::lm::Decoding;
use crate::model::{forward_with_hooks, generate, ActivationCache, Checkpoint, Generation, HeadId, Hooks, LogitSource, Weights};
use crate::util::contains_ci;

/// Forward pass with `heads` zeroed on `span`.
pub fn constrained_forward(
    weights: &Weights,
    tokens: &[usize],
    span: Range<usize>,
    heads: &BTreeSet<HeadId>,
) -> Result<(Array2<f64>, ActivationCache)> {
    let hooks = Hooks {
        constrained: Some((heads, span)),
        ..Hooks::default()
    };
    forward_with_hooks(tokens, weights, &hooks)
}

/// A [`LogitSource`] that constrains every decoding step.
pub struct Constrained<'a> {
    pub weights: &'a Weights,
    pub span: Range<usize>,
    pub heads: BTreeSet<HeadId>,
}

impl LogitSource for Constrained<'_> {
    fn next_logits(&self, ids: &[usize]) -> Result<Array1<f64>> {
        let (logits, _) = constrained_forward(self.weights, ids, self.span.clone(), &self.heads)?;
        Ok(logits.row(ids.len() - 1).to_owned())
    }

    fn max_seq_len(&self) -> usize {
        self.weights.config.max_seq_len
    }
}

/// Answers the instance's question with `heads` constrained on its false-object span.
pub fn mitigate_generate(
    model: &Checkpoint,
    instance: &QuestionInstance,
    heads: &BTreeSet<HeadId>,
    decoding: Decoding,
) -> Result<Generation> {
    let prompt = answer_prompt(&instance.text, &model.vocab)?;
    if prompt[..instance.tokens.len()] != instance.tokens.ids[..] {
        return Err(LabError::Protocol(format!("instance {}: answer prompt does not extend the question", instance.id)));
    }
    let source = Constrained {
        weights: &model.weights,
        span: instance.false_object_span.range(),
        heads: heads.clone(),
    };
    generate(&source, &prompt, decoding.strategy, decoding.max_new, Some(model.vocab.eos()))
}

/// Fraction of answers containing their instance's gold object.
pub fn evaluate_accuracy(answers: &[String], instances: &[QuestionInstance]) -> Result<f64> {
    if answers.len() != instances.len() {
        return Err(LabError::Input(format!(
            "{} answers for {} instances",
            answers.len(),
            instances.len()
        )));
    }
    if answers.is_empty() {
        return Err(LabError::Input("no answers to evaluate".into()));
    }
    let hits = answers
        .iter()
        .zip(instances)
        .filter(|(a, q)| contains_ci(a, &q.gold_object))
        .count();
    Ok(hits as f64 / answers.len() as f64)
}
