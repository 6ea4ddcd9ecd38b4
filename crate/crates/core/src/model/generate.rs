// SPDX-License-Identifier: MIT OR Apache-2.0

//! Greedy, temperature-sampling and beam-search decoding.
//!
//! Decoding is generic over a [`LogitSource`] so constrained inference can
//! reuse the same search. There is no KV cache: each step recomputes the
//! full prefix.

use ndarray::Array1;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::{forward, log_softmax_row};
use super::weights::Weights;
use crate::error::{LabError, Result};

/// Produces next-token logits for a prefix.
pub trait LogitSource {
    fn next_logits(&self, ids: &[usize]) -> Result<Array1<f64>>;
    fn max_seq_len(&self) -> usize;
}

impl LogitSource for Weights {
    fn next_logits(&self, ids: &[usize]) -> Result<Array1<f64>> {
        let (logits, _) = forward(ids, self)?;
        Ok(logits.row(ids.len() - 1).to_owned())
    }

    fn max_seq_len(&self) -> usize {
        self.config.max_seq_len
    }
}

/// Decoding strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    Greedy,
    /// Temperatures `<= 0` decode greedily.
    Sample { temperature: f64, seed: u64 },
    Beam { width: usize },
}

/// A decoded continuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    /// Generated ids, excluding the prompt; includes the stop token if emitted.
    pub ids: Vec<usize>,
    /// Model log-probability (temperature 1) of each generated id.
    pub logprobs: Vec<f64>,
}

impl Generation {
    pub fn score(&self) -> f64 {
        self.logprobs.iter().sum()
    }
}

/// Decodes up to `max_new` tokens after `prompt`, stopping early at `stop`.
pub fn generate<S: LogitSource + ?Sized>(
    source: &S,
    prompt: &[usize],
    strategy: Strategy,
    max_new: usize,
    stop: Option<usize>,
) -> Result<Generation> {
    if prompt.is_empty() {
        return Err(LabError::Input("empty prompt".into()));
    }
    if prompt.len() + max_new > source.max_seq_len() {
        return Err(LabError::Length {
            len: prompt.len() + max_new,
            max: source.max_seq_len(),
        });
    }
    match strategy {
        Strategy::Greedy => greedy(source, prompt, max_new, stop),
        Strategy::Sample { temperature, .. } if temperature <= 0.0 => greedy(source, prompt, max_new, stop),
        Strategy::Sample { temperature, seed } => sample(source, prompt, max_new, stop, temperature, seed),
        Strategy::Beam { width: 0 } => Err(LabError::Config("beam width must be >= 1".into())),
        Strategy::Beam { width } => beam(source, prompt, max_new, stop, width),
    }
}

fn argmax(v: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn greedy<S: LogitSource + ?Sized>(source: &S, prompt: &[usize], max_new: usize, stop: Option<usize>) -> Result<Generation> {
    let mut ids = prompt.to_vec();
    let mut out = Generation { ids: vec![], logprobs: vec![] };
    for _ in 0..max_new {
        let lp = log_softmax_row(source.next_logits(&ids)?.view());
        let t = argmax(&lp);
        ids.push(t);
        out.ids.push(t);
        out.logprobs.push(lp[t]);
        if Some(t) == stop {
            break;
        }
    }
    Ok(out)
}

fn sample<S: LogitSource + ?Sized>(
    source: &S,
    prompt: &[usize],
    max_new: usize,
    stop: Option<usize>,
    temperature: f64,
    seed: u64,
) -> Result<Generation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids = prompt.to_vec();
    let mut out = Generation { ids: vec![], logprobs: vec![] };
    for _ in 0..max_new {
        let logits = source.next_logits(&ids)?;
        let lp = log_softmax_row(logits.view());
        let tempered = log_softmax_row((&logits / temperature).view());
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut t = tempered.len() - 1;
        for (i, &l) in tempered.iter().enumerate() {
            acc += l.exp();
            if u < acc {
                t = i;
                break;
            }
        }
        ids.push(t);
        out.ids.push(t);
        out.logprobs.push(lp[t]);
        if Some(t) == stop {
            break;
        }
    }
    Ok(out)
}

#[derive(Clone)]
struct Hypothesis {
    ids: Vec<usize>,
    logprobs: Vec<f64>,
    score: f64,
}

fn beam<S: LogitSource + ?Sized>(
    source: &S,
    prompt: &[usize],
    max_new: usize,
    stop: Option<usize>,
    width: usize,
) -> Result<Generation> {
    let mut alive = vec![Hypothesis {
        ids: vec![],
        logprobs: vec![],
        score: 0.0,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..max_new {
        let mut candidates = Vec::new();
        for hyp in &alive {
            let mut ctx = prompt.to_vec();
            ctx.extend_from_slice(&hyp.ids);
            let lp = log_softmax_row(source.next_logits(&ctx)?.view());
            for (t, &l) in lp.iter().enumerate() {
                let mut next = hyp.clone();
                next.ids.push(t);
                next.logprobs.push(l);
                next.score += l;
                candidates.push(next);
            }
        }
        // stable: equal scores keep (beam, token) order
        candidates.sort_by(|a, b| b.score.total_cmp(&a.score));
        alive.clear();
        for c in candidates.into_iter().take(width) {
            if Some(*c.ids.last().expect("non-empty")) == stop {
                finished.push(c);
            } else {
                alive.push(c);
            }
        }
        let best_done = finished.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
        let best_alive = alive.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
        if alive.is_empty() || best_done >= best_alive {
            break;
        }
    }
    finished.extend(alive);
    let mut best: Option<Hypothesis> = None;
    for h in finished {
        if best.as_ref().is_none_or(|b| h.score > b.score) {
            best = Some(h);
        }
    }
    let best = best.expect("at least one hypothesis");
    Ok(Generation {
        ids: best.ids,
        logprobs: best.logprobs,
    })
}
