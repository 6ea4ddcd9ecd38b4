// SPDX-License-Identifier: MIT OR Apache-2.0
#![allow(dead_code)]

use premise_lab::model::{ModelConfig, Weights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny(layers: usize, heads: usize, head_dim: usize, vocab: usize, ctx: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        num_layers: layers,
        num_heads: heads,
        model_dim: heads * head_dim,
        head_dim,
        mlp_dim: 2 * heads * head_dim,
        vocab_size: vocab,
        max_seq_len: ctx,
        rng_seed: seed,
    }
}

/// Gaussian-initialised weights scaled so attention is far from uniform.
pub fn sharp_weights(config: &ModelConfig, scale: f64) -> Weights {
    let mut w = Weights::init(config).unwrap();
    for t in w.flat_mut() {
        t.iter_mut().for_each(|v| *v *= scale);
    }
    // non-trivial layer-norm affine part
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed ^ 0x5eed);
    w.ln_gain.iter_mut().for_each(|g| *g = 1.0 + 0.2 * (rng.random::<f64>() - 0.5));
    w.ln_bias.iter_mut().for_each(|b| *b = 0.1 * (rng.random::<f64>() - 0.5));
    w
}

pub fn random_tokens(rng: &mut ChaCha8Rng, n: usize, vocab: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..vocab)).collect()
}

/// Straight-line scalar reimplementation of the forward pass (no ndarray
/// algebra), used as an oracle. Returns logits `[n][V]` and per-head
/// outputs `[layer][head][n][d]`.
pub fn reference_forward(tokens: &[usize], w: &Weights) -> (Vec<Vec<f64>>, Vec<Vec<Vec<Vec<f64>>>>) {
    reference_constrained(tokens, w, &[], 0..0)
}

/// Scalar forward where heads `(layer, head)` write nothing on `span`.
pub fn reference_constrained(
    tokens: &[usize],
    w: &Weights,
    heads: &[(usize, usize)],
    span: std::ops::Range<usize>,
) -> (Vec<Vec<f64>>, Vec<Vec<Vec<Vec<f64>>>>) {
    let c = &w.config;
    let (n, d, dh) = (tokens.len(), c.model_dim, c.head_dim);
    let mut x: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..d).map(|k| w.token_embedding[[tokens[i], k]] + w.position_embedding[[i, k]]).collect())
        .collect();
    let mut all_z = vec![];
    for (l, lw) in w.layers.iter().enumerate() {
        let mut attn = vec![vec![0.0; d]; n];
        let mut layer_z = vec![];
        for (h, hw) in lw.heads.iter().enumerate() {
            let silenced = heads.contains(&(l, h));
            let proj = |m: &ndarray::Array2<f64>, i: usize| -> Vec<f64> {
                (0..dh).map(|a| (0..d).map(|k| x[i][k] * m[[k, a]]).sum()).collect()
            };
            let q: Vec<Vec<f64>> = (0..n).map(|i| proj(&hw.w_q, i)).collect();
            let kk: Vec<Vec<f64>> = (0..n).map(|i| proj(&hw.w_k, i)).collect();
            let v: Vec<Vec<f64>> = (0..n).map(|i| proj(&hw.w_v, i)).collect();
            let mut z = vec![vec![0.0; d]; n];
            for i in 0..n {
                if silenced && span.contains(&i) {
                    continue;
                }
                let s: Vec<f64> = (0..=i)
                    .map(|j| (0..dh).map(|a| q[i][a] * kk[j][a]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
                let tot: f64 = e.iter().sum();
                let mut o = vec![0.0; dh];
                for j in 0..=i {
                    for a in 0..dh {
                        o[a] += e[j] / tot * v[j][a];
                    }
                }
                for k in 0..d {
                    z[i][k] = (0..dh).map(|a| o[a] * hw.w_o[[a, k]]).sum();
                    attn[i][k] += z[i][k];
                }
            }
            layer_z.push(z);
        }
        let dm = lw.mlp_in.nrows();
        for i in 0..n {
            let hidden: Vec<f64> = (0..dm)
                .map(|u| {
                    let p: f64 = (0..d).map(|k| x[i][k] * lw.mlp_in[[u, k]]).sum();
                    0.5 * p * (1.0 + (0.797_884_560_802_865_4 * (p + 0.044_715 * p.powi(3))).tanh())
                })
                .collect();
            for k in 0..d {
                let m: f64 = (0..dm).map(|u| hidden[u] * lw.mlp_out[[u, k]]).sum();
                x[i][k] += attn[i][k] + m;
            }
        }
        all_z.push(layer_z);
    }
    let logits = x
        .iter()
        .map(|row| {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let sd = (var + 1e-5).sqrt();
            let normed: Vec<f64> = (0..d).map(|k| (row[k] - mean) / sd * w.ln_gain[k] + w.ln_bias[k]).collect();
            (0..c.vocab_size)
                .map(|t| (0..d).map(|k| normed[k] * w.unembedding[[k, t]]).sum())
                .collect()
        })
        .collect();
    (logits, all_z)
}

pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
    row.iter().map(|v| v - lse).collect()
}

/// Brute-force Mann-Whitney: ordered pairs, ties ½.
pub fn pair_count_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so near-zero gradients are
/// compared in absolute terms.
pub const FD_FLOOR: f64 = 1e-5;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FD_FLOOR)
}

/// Worst relative error between reverse-mode dL/dA and central finite
/// differences through pattern overrides, over every causal entry of every
/// head, for the loss of `target` at the last position.
pub fn pattern_gradient_error(w: &Weights, tokens: &[usize], target: usize) -> f64 {
    use premise_lab::model::{forward_with_hooks, loss_and_attention_grads, HeadId, Hooks};
    let n = tokens.len();
    let (_, grads, cache) = loss_and_attention_grads(tokens, n - 1, target, w).unwrap();
    let loss_with = |head: HeadId, p: &ndarray::Array2<f64>| -> f64 {
        let mut hooks = Hooks::default();
        hooks.patterns.insert(head, p.view());
        let (logits, _) = forward_with_hooks(tokens, w, &hooks).unwrap();
        let row: Vec<f64> = logits.row(n - 1).to_vec();
        -log_softmax(&row)[target]
    };
    let mut worst = 0.0f64;
    for l in 0..w.config.num_layers {
        for h in 0..w.config.num_heads {
            let id = HeadId::new(l, h);
            let a = cache.pattern(id);
            for i in 0..n {
                for j in 0..=i {
                    let mut plus = a.clone();
                    plus[[i, j]] += FD_STEP;
                    let mut minus = a.clone();
                    minus[[i, j]] -= FD_STEP;
                    let fd = (loss_with(id, &plus) - loss_with(id, &minus)) / (2.0 * FD_STEP);
                    worst = worst.max(rel_err(grads.pattern_grads[l][h][[i, j]], fd));
                }
            }
        }
    }
    worst
}

/// A random (untrained) checkpoint over the default synthetic world and
/// `n` false-premise instances rendered from its facts.
pub fn toy_setup(
    layers: usize,
    heads: usize,
    n: usize,
    seed: u64,
) -> (premise_lab::model::Checkpoint, Vec<premise_lab::dataset::QuestionInstance>) {
    use premise_lab::dataset::{build_question, corrupt_triple, CorruptionStrategy, SyntheticWorld, WorldSpec};
    let world = SyntheticWorld::generate(&WorldSpec::default()).unwrap();
    let vocab = world.vocabulary();
    let cfg = tiny(layers, heads, 4, vocab.len(), 48, seed);
    let weights = sharp_weights(&cfg, 12.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let strategy = CorruptionStrategy::RandomYearShift { max_offset: 5 };
    let mut instances = vec![];
    'outer: for fact in &world.known {
        let c = corrupt_triple(fact, &strategy, &mut rng).unwrap();
        for t in world.templates.for_tag(fact.tag) {
            if instances.len() == n {
                break 'outer;
            }
            let id = format!("{}/{}", fact.subject, t.id);
            instances.push(build_question(&c, t, &vocab, &id).unwrap());
        }
    }
    (premise_lab::model::Checkpoint { weights, vocab }, instances)
}

/// Clean / masked / patched protocol rebuilt from forward hooks only:
/// `(clean gold logit, patched gold logit)` with `patched` heads taking
/// their masked outputs and every other head its clean output.
pub fn replay_protocol(
    model: &premise_lab::model::Checkpoint,
    q: &premise_lab::dataset::QuestionInstance,
    patched: &[premise_lab::model::HeadId],
) -> (f64, f64) {
    use premise_lab::dataset::{build_cloze, cloze_target};
    use premise_lab::model::{forward, forward_with_hooks, HeadId, Hooks};
    let w = &model.weights;
    let cloze = build_cloze(q, &model.vocab, w.config.max_seq_len).unwrap().ids;
    let mut masked = cloze.clone();
    for i in q.false_object_span.range() {
        masked[i] = model.vocab.placeholder();
    }
    let target = cloze_target(q, &model.vocab).unwrap();
    let last = cloze.len() - 1;
    let (clean_logits, clean) = forward(&cloze, w).unwrap();
    let (_, masked_cache) = forward(&masked, w).unwrap();
    let mut hooks = Hooks::default();
    for l in 0..w.config.num_layers {
        for h in 0..w.config.num_heads {
            let id = HeadId::new(l, h);
            let src = if patched.contains(&id) { &masked_cache } else { &clean };
            hooks.head_outputs.insert(id, src.head_output(id).view());
        }
    }
    let scale = clean.ln_scale.to_vec();
    hooks.frozen_ln_scale = Some(&scale);
    let (patched_logits, _) = forward_with_hooks(&cloze, w, &hooks).unwrap();
    (clean_logits[[last, target]], patched_logits[[last, target]])
}
