// SPDX-License-Identifier: MIT OR Apache-2.0

//! Clean / masked / replace-and-freeze runs and the per-head influence grid.
//!
//! Protocol on an instance's cloze prompt:
//!
//! 1. clean run on the original prompt; `P(O)` is the gold first-token logit
//!    at the last position;
//! 2. masked run with every false-object token replaced by the placeholder;
//! 3. for one head, a patched run on the clean prompt where that head's
//!    contribution is taken from the masked run and every *other* head in
//!    every layer is pinned to its clean contribution. MLPs and the residual
//!    stream are recomputed; the final layer-norm scale is held at its clean
//!    value so that the readout is affine in the head contributions.
//!
//! `E_head = P'(O) - P(O)`.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::question::{build_cloze, cloze_target, QuestionInstance};
use crate::error::{LabError, Result};
use crate::model::{forward, forward_with_hooks, ActivationCache, Checkpoint, HeadId, Hooks, Weights};

/// Replaces every token of the false-object span with `placeholder`.
pub fn masked_prompt(tokens: &[usize], span: std::ops::Range<usize>, placeholder: usize, vocab_size: usize) -> Result<Vec<usize>> {
    if placeholder >= vocab_size {
        return Err(LabError::Vocabulary(format!("placeholder id {placeholder} >= {vocab_size}")));
    }
    if span.start > span.end || span.end > tokens.len() {
        return Err(LabError::Index(format!(
            "span {}..{} outside prompt of length {}",
            span.start,
            span.end,
            tokens.len()
        )));
    }
    let mut out = tokens.to_vec();
    out[span].fill(placeholder);
    Ok(out)
}

/// The two reference runs of one instance, shared by all patched runs.
#[derive(Debug, Clone)]
pub struct ProtocolRuns {
    pub instance_id: String,
    pub clean_tokens: Vec<usize>,
    pub masked_tokens: Vec<usize>,
    pub target: usize,
    pub clean: ActivationCache,
    pub masked: ActivationCache,
}

impl ProtocolRuns {
    /// Runs the clean and masked passes on explicit prompts.
    pub fn from_prompts(
        weights: &Weights,
        instance_id: &str,
        clean_tokens: Vec<usize>,
        masked_tokens: Vec<usize>,
        span: std::ops::Range<usize>,
        target: usize,
    ) -> Result<Self> {
        if clean_tokens.len() != masked_tokens.len() {
            return Err(LabError::Protocol(format!(
                "clean prompt has {} tokens, masked prompt {}",
                clean_tokens.len(),
                masked_tokens.len()
            ))
            .with_instance(instance_id));
        }
        if let Some(i) = (0..clean_tokens.len()).find(|&i| !span.contains(&i) && clean_tokens[i] != masked_tokens[i]) {
            return Err(LabError::Protocol(format!("clean and masked prompts differ at position {i} outside the span"))
                .with_instance(instance_id));
        }
        if target >= weights.config.vocab_size {
            return Err(LabError::Index(format!("target {target} out of vocabulary")).with_instance(instance_id));
        }
        let (_, clean) = forward(&clean_tokens, weights)?;
        let (_, masked) = forward(&masked_tokens, weights)?;
        Ok(Self {
            instance_id: instance_id.into(),
            clean_tokens,
            masked_tokens,
            target,
            clean,
            masked,
        })
    }

    /// Builds the cloze prompt of `instance` and runs both passes.
    pub fn for_instance(model: &Checkpoint, instance: &QuestionInstance) -> Result<Self> {
        let cloze = build_cloze(instance, &model.vocab, model.weights.config.max_seq_len)?;
        let target = cloze_target(instance, &model.vocab)?;
        let span = instance.false_object_span.range();
        let masked = masked_prompt(&cloze.ids, span.clone(), model.vocab.placeholder(), model.vocab.len())
            .map_err(|e| e.with_instance(&instance.id))?;
        Self::from_prompts(&model.weights, &instance.id, cloze.ids, masked, span, target)
    }

    pub fn last(&self) -> usize {
        self.clean_tokens.len() - 1
    }

    /// `P(O)` of the clean run.
    pub fn clean_logit(&self) -> f64 {
        self.clean.logits[[self.last(), self.target]]
    }

    /// Clean run with every head pinned and the heads in `patched` taken
    /// from the masked run. Returns the full logits.
    pub fn patched_logits(&self, weights: &Weights, patched: &BTreeSet<HeadId>) -> Result<Array2<f64>> {
        let cfg = &weights.config;
        let mut outputs = BTreeMap::new();
        for l in 0..cfg.num_layers {
            for h in 0..cfg.num_heads {
                let id = HeadId::new(l, h);
                let src = if patched.contains(&id) { &self.masked } else { &self.clean };
                outputs.insert(id, src.head_output(id).view());
            }
        }
        let frozen = self.clean.ln_scale.to_vec();
        let hooks = Hooks {
            head_outputs: outputs,
            frozen_ln_scale: Some(&frozen),
            ..Hooks::default()
        };
        Ok(forward_with_hooks(&self.clean_tokens, weights, &hooks)?.0)
    }

    /// `P'(O) - P(O)` when the heads in `patched` are replaced.
    pub fn patch_delta(&self, weights: &Weights, patched: &BTreeSet<HeadId>) -> Result<f64> {
        let logits = self.patched_logits(weights, patched)?;
        Ok(logits[[self.last(), self.target]] - self.clean_logit())
    }

    /// `E_head` for one head.
    pub fn influence(&self, weights: &Weights, head: HeadId) -> Result<f64> {
        let cfg = &weights.config;
        if head.layer >= cfg.num_layers || head.head >= cfg.num_heads {
            return Err(LabError::Index(format!("head {head} out of range")));
        }
        self.patch_delta(weights, &BTreeSet::from([head]))
    }

    /// `E_head` for every head, `L x H`.
    pub fn influence_grid(&self, weights: &Weights) -> Result<Array2<f64>> {
        let cfg = &weights.config;
        let mut grid = Array2::zeros((cfg.num_layers, cfg.num_heads));
        for l in 0..cfg.num_layers {
            for h in 0..cfg.num_heads {
                grid[[l, h]] = self.influence(weights, HeadId::new(l, h))?;
            }
        }
        Ok(grid)
    }
}

/// `E_head` of one head on one instance.
pub fn head_influence(model: &Checkpoint, instance: &QuestionInstance, head: HeadId) -> Result<f64> {
    ProtocolRuns::for_instance(model, instance)?
        .influence(&model.weights, head)
        .map_err(|e| e.with_instance(&instance.id))
}

/// Influence grids of a set of instances and their average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceMap {
    pub provenance: String,
    pub num_layers: usize,
    pub num_heads: usize,
    /// Mean signed `E_head`.
    pub mean: Array2<f64>,
    /// Mean `|E_head|`.
    pub mean_abs: Array2<f64>,
    /// `(instance id, grid)` in input order.
    pub per_instance: Vec<(String, Array2<f64>)>,
}

impl InfluenceMap {
    pub fn from_grids(provenance: &str, per_instance: Vec<(String, Array2<f64>)>) -> Result<Self> {
        let first = per_instance
            .first()
            .ok_or_else(|| LabError::Input("influence map needs at least one instance".into()))?;
        let (l, h) = first.1.dim();
        let mut mean = Array2::zeros((l, h));
        let mut mean_abs = Array2::zeros((l, h));
        for (id, g) in &per_instance {
            if g.dim() != (l, h) {
                return Err(LabError::Shape(format!("instance {id}: grid {:?} vs {:?}", g.dim(), (l, h))));
            }
            mean += g;
            mean_abs += &g.mapv(f64::abs);
        }
        let n = per_instance.len() as f64;
        mean /= n;
        mean_abs /= n;
        Ok(Self {
            provenance: provenance.into(),
            num_layers: l,
            num_heads: h,
            mean,
            mean_abs,
            per_instance,
        })
    }

    /// How many instances each head passes `E >= tau` on.
    pub fn pass_counts(&self, tau: f64) -> Array2<usize> {
        let mut counts = Array2::zeros((self.num_layers, self.num_heads));
        for (_, g) in &self.per_instance {
            for ((l, h), &e) in g.indexed_iter() {
                if e >= tau {
                    counts[[l, h]] += 1;
                }
            }
        }
        counts
    }

    /// Largest single-instance influence.
    pub fn max_influence(&self) -> f64 {
        self.per_instance
            .iter()
            .flat_map(|(_, g)| g.iter().copied())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `layer,head,mean_e,mean_abs_e,pass_frequency` rows.
    pub fn to_csv(&self, tau: f64) -> String {
        let counts = self.pass_counts(tau);
        let n = self.per_instance.len() as f64;
        let mut s = String::from("layer,head,mean_e,mean_abs_e,pass_frequency\n");
        for l in 0..self.num_layers {
            for h in 0..self.num_heads {
                s.push_str(&format!(
                    "{l},{h},{:e},{:e},{:e}\n",
                    self.mean[[l, h]],
                    self.mean_abs[[l, h]],
                    counts[[l, h]] as f64 / n
                ));
            }
        }
        s
    }

    /// `instance,layer,head,e` rows for every instance.
    pub fn per_instance_csv(&self) -> String {
        let mut s = String::from("instance,layer,head,e\n");
        for (id, g) in &self.per_instance {
            for ((l, h), e) in g.indexed_iter() {
                s.push_str(&format!("{id},{l},{h},{e:e}\n"));
            }
        }
        s
    }
}

/// Averages `E_head` over `instances`; each instance shares one clean and
/// one masked run across all `L x H` patched runs.
pub fn influence_map(model: &Checkpoint, instances: &[QuestionInstance]) -> Result<InfluenceMap> {
    if instances.is_empty() {
        return Err(LabError::Input("influence map needs at least one instance".into()));
    }
    let mut grids = Vec::with_capacity(instances.len());
    for q in instances {
        let runs = ProtocolRuns::for_instance(model, q)?;
        let grid = runs.influence_grid(&model.weights).map_err(|e| e.with_instance(&q.id))?;
        grids.push((q.id.clone(), grid));
    }
    let provenance = if instances.len() == 1 {
        instances[0].id.clone()
    } else {
        format!("mean over {} instances", instances.len())
    };
    InfluenceMap::from_grids(&provenance, grids)
}
