// SPDX-License-Identifier: MIT OR Apache-2.0

//! Forward pass with activation capture and intervention hooks.
//!
//! The residual update is `x_l = x_{l-1} + a_l + m_l`; both the attention
//! output `a_l` and the MLP output `m_l` read `x_{l-1}`. A single final layer
//! norm precedes the unembedding. Attention logits are scaled by `1/sqrt(d_h)`.
//!
//! Every analysis path (patching, constraining, gradient checks) runs through
//! [`forward_with_hooks`], so an empty [`Hooks`] reproduces [`forward`]
//! bit-for-bit.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::weights::Weights;
use crate::error::{LabError, Result};

/// Epsilon inside the final layer norm.
pub const LN_EPS: f64 = 1e-5;

/// Identifies one attention head as `(layer, head)`, both zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HeadId {
    pub layer: usize,
    pub head: usize,
}

impl HeadId {
    pub fn new(layer: usize, head: usize) -> Self {
        Self { layer, head }
    }
}

impl std::fmt::Display for HeadId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.layer, self.head)
    }
}

/// Overrides applied during a forward pass.
#[derive(Debug, Default, Clone)]
pub struct Hooks<'a> {
    /// Head contributions `z_l^h` to use verbatim instead of computing them.
    pub head_outputs: BTreeMap<HeadId, ArrayView2<'a, f64>>,
    /// Heads whose contribution rows in the range are zeroed before summation.
    pub constrained: Option<(&'a BTreeSet<HeadId>, Range<usize>)>,
    /// Attention patterns used instead of the softmax (not renormalized).
    pub patterns: BTreeMap<HeadId, ArrayView2<'a, f64>>,
    /// Additive offsets on the scaled pre-softmax scores.
    pub score_offsets: BTreeMap<HeadId, ArrayView2<'a, f64>>,
    /// Per-row final layer-norm scale to use instead of the computed one.
    pub frozen_ln_scale: Option<&'a [f64]>,
}

impl Hooks<'_> {
    pub fn is_empty(&self) -> bool {
        self.head_outputs.is_empty()
            && self.constrained.is_none()
            && self.patterns.is_empty()
            && self.score_offsets.is_empty()
            && self.frozen_ln_scale.is_none()
    }
}

/// Recorded activations of one residual layer.
#[derive(Debug, Clone)]
pub struct LayerCache {
    /// Per-head queries `x_{l-1} W_Q^h`, `N x d_h`.
    pub queries: Vec<Array2<f64>>,
    pub keys: Vec<Array2<f64>>,
    pub values: Vec<Array2<f64>>,
    /// Per-head attention patterns `A_l^h`, `N x N`, lower triangular.
    pub patterns: Vec<Array2<f64>>,
    /// Per-head `A^h V^h` before the output projection, `N x d_h`.
    pub mixed: Vec<Array2<f64>>,
    /// Per-head contributions `z_l^h`, `N x d`.
    pub head_outputs: Vec<Array2<f64>>,
    /// `a_l = sum_h z_l^h`
    pub attn_out: Array2<f64>,
    /// `x_{l-1} K^T`, `N x dm`
    pub mlp_pre: Array2<f64>,
    /// `m_l`
    pub mlp_out: Array2<f64>,
    /// `x_l`
    pub residual: Array2<f64>,
}

/// Everything recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct ActivationCache {
    pub tokens: Vec<usize>,
    /// `x_0`
    pub embedded: Array2<f64>,
    pub layers: Vec<LayerCache>,
    /// Final layer-norm statistics per row.
    pub ln_mean: Array1<f64>,
    pub ln_scale: Array1<f64>,
    /// `(x_L - mean) / scale`
    pub normed: Array2<f64>,
    /// `N x V`
    pub logits: Array2<f64>,
}

impl ActivationCache {
    pub fn seq_len(&self) -> usize {
        self.tokens.len()
    }

    /// Residual stream entering layer `l` (`x_{l-1}` in one-based notation).
    pub fn layer_input(&self, l: usize) -> &Array2<f64> {
        if l == 0 {
            &self.embedded
        } else {
            &self.layers[l - 1].residual
        }
    }

    pub fn pattern(&self, head: HeadId) -> &Array2<f64> {
        &self.layers[head.layer].patterns[head.head]
    }

    pub fn head_output(&self, head: HeadId) -> &Array2<f64> {
        &self.layers[head.layer].head_outputs[head.head]
    }

    /// Logits at the final position.
    pub fn last_logits(&self) -> ArrayView2<'_, f64> {
        let n = self.seq_len();
        self.logits.slice(s![n - 1..n, ..])
    }
}

pub(crate) fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let t = (C * (x + 0.044_715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044_715 * x * x)
}

/// Causal softmax of `scores`; entries above the diagonal are exactly zero.
pub(crate) fn causal_softmax(scores: &Array2<f64>) -> Array2<f64> {
    let n = scores.nrows();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        let row = scores.slice(s![i, ..=i]);
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut total = 0.0;
        for j in 0..=i {
            let e = (row[j] - max).exp();
            out[[i, j]] = e;
            total += e;
        }
        for j in 0..=i {
            out[[i, j]] /= total;
        }
    }
    out
}

fn validate_tokens(tokens: &[usize], weights: &Weights) -> Result<()> {
    let cfg = &weights.config;
    if tokens.is_empty() || tokens.len() > cfg.max_seq_len {
        return Err(LabError::Length {
            len: tokens.len(),
            max: cfg.max_seq_len,
        });
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t >= cfg.vocab_size) {
        return Err(LabError::Vocabulary(format!(
            "token id {bad} >= vocab size {}",
            cfg.vocab_size
        )));
    }
    Ok(())
}

fn check_square(name: &str, head: HeadId, m: &ArrayView2<'_, f64>, rows: usize, cols: usize) -> Result<()> {
    if m.dim() != (rows, cols) {
        return Err(LabError::Shape(format!(
            "{name} for head {head}: expected {rows}x{cols}, found {:?}",
            m.dim()
        )));
    }
    Ok(())
}

/// Plain forward pass.
pub fn forward(tokens: &[usize], weights: &Weights) -> Result<(Array2<f64>, ActivationCache)> {
    forward_with_hooks(tokens, weights, &Hooks::default())
}

/// Forward pass applying `hooks`.
pub fn forward_with_hooks(
    tokens: &[usize],
    weights: &Weights,
    hooks: &Hooks<'_>,
) -> Result<(Array2<f64>, ActivationCache)> {
    validate_tokens(tokens, weights)?;
    let cfg = &weights.config;
    let n = tokens.len();
    let d = cfg.model_dim;
    let scale = cfg.attn_scale();

    if let Some((heads, span)) = &hooks.constrained {
        if span.start > span.end || span.end > n {
            return Err(LabError::Index(format!(
                "constraint span {}..{} outside sequence of length {n}",
                span.start, span.end
            )));
        }
        if let Some(h) = heads
            .iter()
            .find(|h| h.layer >= cfg.num_layers || h.head >= cfg.num_heads)
        {
            return Err(LabError::Index(format!("head {h} out of range")));
        }
    }
    for (h, m) in &hooks.head_outputs {
        check_square("head output", *h, m, n, d)?;
    }
    for (h, m) in &hooks.patterns {
        check_square("pattern", *h, m, n, n)?;
    }
    for (h, m) in &hooks.score_offsets {
        check_square("score offset", *h, m, n, n)?;
    }

    let mut x = Array2::zeros((n, d));
    for (i, &t) in tokens.iter().enumerate() {
        let mut row = x.row_mut(i);
        row.assign(&weights.token_embedding.row(t));
        row += &weights.position_embedding.row(i);
    }
    let embedded = x.clone();

    let mut layers = Vec::with_capacity(cfg.num_layers);
    for (l, lw) in weights.layers.iter().enumerate() {
        let nh = lw.heads.len();
        let mut queries = Vec::with_capacity(nh);
        let mut keys = Vec::with_capacity(nh);
        let mut values = Vec::with_capacity(nh);
        let mut patterns = Vec::with_capacity(nh);
        let mut mixed = Vec::with_capacity(nh);
        let mut head_outputs = Vec::with_capacity(nh);
        let mut attn_out = Array2::<f64>::zeros((n, d));
        for (h, hw) in lw.heads.iter().enumerate() {
            let id = HeadId::new(l, h);
            let q = x.dot(&hw.w_q);
            let k = x.dot(&hw.w_k);
            let v = x.dot(&hw.w_v);
            let pattern = match hooks.patterns.get(&id) {
                Some(p) => p.to_owned(),
                None => {
                    let mut scores = q.dot(&k.t()) * scale;
                    if let Some(off) = hooks.score_offsets.get(&id) {
                        scores += off;
                    }
                    causal_softmax(&scores)
                }
            };
            let o = pattern.dot(&v);
            let mut z = match hooks.head_outputs.get(&id) {
                Some(z) => z.to_owned(),
                None => o.dot(&hw.w_o),
            };
            if let Some((set, span)) = &hooks.constrained {
                if set.contains(&id) {
                    z.slice_mut(s![span.clone(), ..]).fill(0.0);
                }
            }
            attn_out += &z;
            queries.push(q);
            keys.push(k);
            values.push(v);
            patterns.push(pattern);
            mixed.push(o);
            head_outputs.push(z);
        }
        let mlp_pre = x.dot(&lw.mlp_in.t());
        let mlp_out = mlp_pre.mapv(gelu).dot(&lw.mlp_out);
        let residual = &x + &attn_out + &mlp_out;
        x = residual.clone();
        layers.push(LayerCache {
            queries,
            keys,
            values,
            patterns,
            mixed,
            head_outputs,
            attn_out,
            mlp_pre,
            mlp_out,
            residual,
        });
    }

    let ln_mean = x.mean_axis(Axis(1)).expect("d >= 1");
    let ln_scale = match hooks.frozen_ln_scale {
        Some(frozen) => {
            if frozen.len() != n {
                return Err(LabError::Shape(format!(
                    "frozen layer-norm scale has {} rows, sequence has {n}",
                    frozen.len()
                )));
            }
            Array1::from(frozen.to_vec())
        }
        None => {
            let centered = &x - &ln_mean.view().insert_axis(Axis(1));
            centered
                .mapv(|v| v * v)
                .mean_axis(Axis(1))
                .expect("d >= 1")
                .mapv(|var| (var + LN_EPS).sqrt())
        }
    };
    let normed = (&x - &ln_mean.view().insert_axis(Axis(1))) / ln_scale.view().insert_axis(Axis(1));
    let out = &normed * &weights.ln_gain + &weights.ln_bias;
    let logits = out.dot(&weights.unembedding);

    let cache = ActivationCache {
        tokens: tokens.to_vec(),
        embedded,
        layers,
        ln_mean,
        ln_scale,
        normed,
        logits: logits.clone(),
    };
    Ok((logits, cache))
}

/// Row-wise log-softmax.
pub fn log_softmax_row(row: ndarray::ArrayView1<'_, f64>) -> Array1<f64> {
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
    row.mapv(|v| v - lse)
}
