// SPDX-License-Identifier: MIT OR Apache-2.0

//! Minimal trainer: Adam on mean next-token cross-entropy.
//!
//! When a sequence contains the `<ans>` marker, only the tokens after it are
//! scored, so the model spends capacity on answers rather than on predicting
//! question wording.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backward::{backward, cross_entropy};
use super::config::ModelConfig;
use super::forward::forward;
use super::tokenizer::TokenSequence;
use super::weights::Weights;
use crate::error::{LabError, Result};

/// Optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Token id after which targets are scored (usually `<ans>`).
    pub answer_marker: Option<usize>,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            steps: 1000,
            batch_size: 16,
            clip_norm: Some(1.0),
            answer_marker: None,
        }
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct Trained {
    pub weights: Weights,
    /// Mean batch loss at every step.
    pub loss_history: Vec<f64>,
}

/// A training sequence whose tokens from `loss_from` on are scored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub ids: Vec<usize>,
    pub loss_from: usize,
}

impl Example {
    /// Scores everything after the first `marker` (or all but the first token).
    pub fn from_marker(ids: Vec<usize>, marker: Option<usize>) -> Self {
        let loss_from = marker
            .and_then(|m| ids.iter().position(|&t| t == m))
            .map(|p| p + 1)
            .unwrap_or(1);
        Self { ids, loss_from }
    }

    fn targets(&self) -> Vec<(usize, usize)> {
        (self.loss_from.max(1)..self.ids.len())
            .map(|t| (t - 1, self.ids[t]))
            .collect()
    }
}

#[cfg(test)]
fn targets_for(ids: &[usize], marker: Option<usize>) -> Vec<(usize, usize)> {
    Example::from_marker(ids.to_vec(), marker).targets()
}

/// Loss and gradient of one example.
pub fn example_loss_and_grad(weights: &Weights, example: &Example) -> Result<(f64, Weights)> {
    let (logits, cache) = forward(&example.ids, weights)?;
    let targets = example.targets();
    let (loss, dlogits) = cross_entropy(&logits, &targets);
    let grads = backward(weights, &cache, &dlogits, true)
        .weights
        .expect("weight gradients requested");
    Ok((loss, grads))
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(w: &Weights) -> Self {
        let shapes: Vec<usize> = w.flat().iter().map(|t| t.len()).collect();
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, w: &mut Weights, g: &Weights, p: &TrainParams) {
        self.t += 1;
        let bc1 = 1.0 - p.beta1.powi(self.t);
        let bc2 = 1.0 - p.beta2.powi(self.t);
        for (k, (wt, gt)) in w.flat_mut().into_iter().zip(g.flat()).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..wt.len() {
                m[i] = p.beta1 * m[i] + (1.0 - p.beta1) * gt[i];
                v[i] = p.beta2 * v[i] + (1.0 - p.beta2) * gt[i] * gt[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                wt[i] -= p.learning_rate * mhat / (vhat.sqrt() + p.epsilon);
            }
        }
    }
}

fn add_scaled(acc: &mut Weights, g: &Weights, by: f64) {
    for (a, b) in acc.flat_mut().into_iter().zip(g.flat()) {
        for (x, y) in a.iter_mut().zip(b.iter()) {
            *x += by * y;
        }
    }
}

fn scale(acc: &mut Weights, by: f64) {
    for a in acc.flat_mut() {
        a.iter_mut().for_each(|x| *x *= by);
    }
}

fn global_norm(g: &Weights) -> f64 {
    g.flat()
        .iter()
        .map(|t| t.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Trains from a fresh seeded initialization.
pub fn train(corpus: &[TokenSequence], config: &ModelConfig, params: &TrainParams) -> Result<Trained> {
    let init = Weights::init(config)?;
    train_from(init, corpus, params)
}

/// Continues training from existing weights, scoring after `params.answer_marker`.
pub fn train_from(weights: Weights, corpus: &[TokenSequence], params: &TrainParams) -> Result<Trained> {
    let examples: Vec<Example> = corpus
        .iter()
        .map(|s| Example::from_marker(s.ids.clone(), params.answer_marker))
        .collect();
    train_examples(weights, &examples, params)
}

/// Trains on explicit examples. Deterministic given `weights.config.rng_seed`.
pub fn train_examples(mut weights: Weights, corpus: &[Example], params: &TrainParams) -> Result<Trained> {
    if corpus.is_empty() {
        return Err(LabError::Input("training corpus is empty".into()));
    }
    if params.batch_size == 0 {
        return Err(LabError::Config("batch_size must be >= 1".into()));
    }
    for seq in corpus {
        if seq.ids.len() > weights.config.max_seq_len {
            return Err(LabError::Length {
                len: seq.ids.len(),
                max: weights.config.max_seq_len,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(weights.config.rng_seed ^ 0x005e_ed0f_ba7c);
    let mut adam = Adam::new(&weights);
    let mut loss_history = Vec::with_capacity(params.steps);
    for step in 0..params.steps {
        let mut acc = weights.zeros_like();
        let mut batch_loss = 0.0;
        for _ in 0..params.batch_size {
            let seq = &corpus[rng.random_range(0..corpus.len())];
            let (loss, g) = example_loss_and_grad(&weights, seq)?;
            batch_loss += loss;
            add_scaled(&mut acc, &g, 1.0);
        }
        let inv = 1.0 / params.batch_size as f64;
        batch_loss *= inv;
        if !batch_loss.is_finite() {
            return Err(LabError::Training { step, loss: batch_loss });
        }
        scale(&mut acc, inv);
        if let Some(clip) = params.clip_norm {
            let norm = global_norm(&acc);
            if norm > clip {
                scale(&mut acc, clip / norm);
            }
        }
        adam.step(&mut weights, &acc, params);
        if !weights.is_finite() {
            return Err(LabError::Training { step, loss: f64::NAN });
        }
        loss_history.push(batch_loss);
    }
    Ok(Trained { weights, loss_history })
}

/// Mean loss over the whole corpus.
pub fn corpus_loss(weights: &Weights, corpus: &[TokenSequence], marker: Option<usize>) -> Result<f64> {
    let examples: Vec<Example> = corpus
        .iter()
        .map(|s| Example::from_marker(s.ids.clone(), marker))
        .collect();
    examples_loss(weights, &examples)
}

pub fn examples_loss(weights: &Weights, examples: &[Example]) -> Result<f64> {
    let mut total = 0.0;
    for ex in examples {
        let (logits, _) = forward(&ex.ids, weights)?;
        total += cross_entropy(&logits, &ex.targets()).0;
    }
    Ok(total / examples.len().max(1) as f64)
}
