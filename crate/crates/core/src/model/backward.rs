// SPDX-License-Identifier: MIT OR Apache-2.0

//! Hand-written reverse-mode pass over a recorded [`ActivationCache`].
//!
//! The backward pass assumes the cache came from an un-hooked forward pass.
//! Besides parameter gradients it returns `dL/dA_l^h` for every head, where
//! the pattern entries are treated as free variables (the derivative the
//! attribution score multiplies against `A`).

use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::forward::{forward, gelu, gelu_grad, log_softmax_row, ActivationCache};
use super::weights::Weights;
use crate::error::{LabError, Result};

/// `dL/dA_l^h` for every head plus the scalar loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCache {
    pub loss: f64,
    /// Indexed `[layer][head]`, each `N x N`, zero above the diagonal.
    pub pattern_grads: Vec<Vec<Array2<f64>>>,
}

impl GradientCache {
    pub fn seq_len(&self) -> usize {
        self.pattern_grads
            .first()
            .and_then(|l| l.first())
            .map(|g| g.nrows())
            .unwrap_or(0)
    }
}

/// Output of [`backward`].
pub struct Backward {
    pub weights: Option<Weights>,
    pub pattern_grads: Vec<Vec<Array2<f64>>>,
}

/// Propagates `dlogits` (`N x V`) back through the network.
pub fn backward(weights: &Weights, cache: &ActivationCache, dlogits: &Array2<f64>, want_weights: bool) -> Backward {
    let cfg = &weights.config;
    let n = cache.seq_len();
    let scale = cfg.attn_scale();
    let mut grads = want_weights.then(|| weights.zeros_like());

    // unembedding and final layer norm
    let ln_out = &cache.normed * &weights.ln_gain + &weights.ln_bias;
    if let Some(g) = grads.as_mut() {
        g.unembedding = ln_out.t().dot(dlogits);
    }
    let dy = dlogits.dot(&weights.unembedding.t());
    if let Some(g) = grads.as_mut() {
        g.ln_gain = (&dy * &cache.normed).sum_axis(Axis(0));
        g.ln_bias = dy.sum_axis(Axis(0));
    }
    let dn = &dy * &weights.ln_gain;
    let mean_dn = dn.mean_axis(Axis(1)).expect("d >= 1").insert_axis(Axis(1));
    let mean_dn_n = (&dn * &cache.normed)
        .mean_axis(Axis(1))
        .expect("d >= 1")
        .insert_axis(Axis(1));
    let mut dx = (&dn - &mean_dn - &cache.normed * &mean_dn_n) / cache.ln_scale.view().insert_axis(Axis(1));

    let mut pattern_grads = vec![Vec::new(); cfg.num_layers];
    for l in (0..cfg.num_layers).rev() {
        let lw = &weights.layers[l];
        let lc = &cache.layers[l];
        let x_in = cache.layer_input(l);
        let mut dx_in = dx.clone();

        // MLP: m = gelu(x K^T) V
        let act = lc.mlp_pre.mapv(gelu);
        let dact = dx.dot(&lw.mlp_out.t());
        let dpre = &dact * &lc.mlp_pre.mapv(gelu_grad);
        dx_in += &dpre.dot(&lw.mlp_in);
        if let Some(g) = grads.as_mut() {
            g.layers[l].mlp_out = act.t().dot(&dx);
            g.layers[l].mlp_in = dpre.t().dot(x_in);
        }

        // attention heads: z = A (x W_V) W_O
        let mut layer_pattern_grads = Vec::with_capacity(lw.heads.len());
        for (h, hw) in lw.heads.iter().enumerate() {
            let a = &lc.patterns[h];
            let v = &lc.values[h];
            let d_mixed = dx.dot(&hw.w_o.t());
            let mut da = d_mixed.dot(&v.t());
            for i in 0..n {
                da.slice_mut(s![i, i + 1..]).fill(0.0);
            }
            let dv = a.t().dot(&d_mixed);
            // softmax: dS = A * (dA - rowsum(A * dA))
            let row_dot = (a * &da).sum_axis(Axis(1)).insert_axis(Axis(1));
            let dscores = a * &(&da - &row_dot) * scale;
            let dq = dscores.dot(&lc.keys[h]);
            let dk = dscores.t().dot(&lc.queries[h]);
            dx_in += &dv.dot(&hw.w_v.t());
            dx_in += &dq.dot(&hw.w_q.t());
            dx_in += &dk.dot(&hw.w_k.t());
            if let Some(g) = grads.as_mut() {
                let gh = &mut g.layers[l].heads[h];
                gh.w_o = lc.mixed[h].t().dot(&dx);
                gh.w_v = x_in.t().dot(&dv);
                gh.w_q = x_in.t().dot(&dq);
                gh.w_k = x_in.t().dot(&dk);
            }
            layer_pattern_grads.push(da);
        }
        pattern_grads[l] = layer_pattern_grads;
        dx = dx_in;
    }

    if let Some(g) = grads.as_mut() {
        for (i, &t) in cache.tokens.iter().enumerate() {
            let mut row = g.token_embedding.row_mut(t);
            row += &dx.row(i);
            let mut prow = g.position_embedding.row_mut(i);
            prow += &dx.row(i);
        }
    }

    Backward {
        weights: grads,
        pattern_grads,
    }
}

/// Mean cross-entropy over `(position, target)` pairs and its logit gradient.
pub fn cross_entropy(logits: &Array2<f64>, targets: &[(usize, usize)]) -> (f64, Array2<f64>) {
    let mut dlogits = Array2::zeros(logits.raw_dim());
    if targets.is_empty() {
        return (0.0, dlogits);
    }
    let count = targets.len() as f64;
    let mut loss = 0.0;
    for &(p, t) in targets {
        let lp = log_softmax_row(logits.row(p));
        loss -= lp[t];
        let mut drow = dlogits.row_mut(p);
        for (k, v) in lp.iter().enumerate() {
            drow[k] += v.exp() / count;
        }
        drow[t] -= 1.0 / count;
    }
    (loss / count, dlogits)
}

/// Cross-entropy of `target_token` at `target_position` and `dL/dA` for all heads.
pub fn loss_and_attention_grads(
    tokens: &[usize],
    target_position: usize,
    target_token: usize,
    weights: &Weights,
) -> Result<(f64, GradientCache, ActivationCache)> {
    if target_position >= tokens.len() {
        return Err(LabError::Index(format!(
            "target position {target_position} >= sequence length {}",
            tokens.len()
        )));
    }
    if target_token >= weights.config.vocab_size {
        return Err(LabError::Index(format!(
            "target token {target_token} >= vocab size {}",
            weights.config.vocab_size
        )));
    }
    let (logits, cache) = forward(tokens, weights)?;
    let (loss, dlogits) = cross_entropy(&logits, &[(target_position, target_token)]);
    let back = backward(weights, &cache, &dlogits, false);
    Ok((
        loss,
        GradientCache {
            loss,
            pattern_grads: back.pattern_grads,
        },
        cache,
    ))
}
