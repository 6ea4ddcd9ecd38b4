// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use common::{reference_forward, sharp_weights, tiny};
use ndarray::{array, Array2};
use premise_lab::model::{forward, HeadId, Weights};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn two_token_forward_by_hand() {
    let cfg = tiny(1, 1, 2, 3, 4, 0);
    let mut w = Weights::init(&cfg).unwrap();
    w.token_embedding = array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]];
    w.position_embedding.fill(0.0);
    let h = &mut w.layers[0].heads[0];
    h.w_q.fill(0.0);
    h.w_k.fill(0.0);
    h.w_v = Array2::eye(2);
    h.w_o = Array2::eye(2);
    w.layers[0].mlp_in.fill(0.0);
    w.layers[0].mlp_out.fill(0.0);
    w.ln_gain.fill(1.0);
    w.ln_bias.fill(0.0);
    w.unembedding = array![[1.0, 0.0, 1.0], [0.0, 1.0, -1.0]];

    // row 0: [1,0] + [1,0] = [2,0]; row 1: [0,1] + mean([1,0],[0,1]) = [0.5,1.5]
    let s0 = (1.0f64 + 1e-5).sqrt();
    let s1 = (0.25f64 + 1e-5).sqrt();
    let expected = array![[1.0 / s0, -1.0 / s0, 2.0 / s0], [-0.5 / s1, 0.5 / s1, -1.0 / s1]];
    let (logits, cache) = forward(&[0, 1], &w).unwrap();
    for (a, b) in logits.iter().zip(expected.iter()) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
    assert_eq!(cache.pattern(HeadId::new(0, 0)), &array![[1.0, 0.0], [0.5, 0.5]]);
}

#[test]
fn matches_scalar_reference_on_random_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (seed, (l, h, dh)) in [(1, 1, 4), (2, 2, 3), (2, 3, 2), (3, 1, 5)].into_iter().enumerate() {
        let cfg = tiny(l, h, dh, 11, 9, seed as u64);
        let w = sharp_weights(&cfg, 25.0);
        let toks = common::random_tokens(&mut rng, 7, 11);
        let (logits, cache) = forward(&toks, &w).unwrap();
        let (ref_logits, ref_z) = reference_forward(&toks, &w);
        let scale = logits.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for i in 0..toks.len() {
            for t in 0..11 {
                assert!((logits[[i, t]] - ref_logits[i][t]).abs() <= 1e-11 * scale);
            }
        }
        for (layer, zs) in ref_z.iter().enumerate() {
            for (head, z) in zs.iter().enumerate() {
                let got = cache.head_output(HeadId::new(layer, head));
                for i in 0..toks.len() {
                    for k in 0..cfg.model_dim {
                        assert!((got[[i, k]] - z[i][k]).abs() < 1e-10);
                    }
                }
            }
        }
    }
}

#[test]
fn attention_is_causal_and_rows_are_distributions() {
    let cfg = tiny(2, 2, 4, 9, 8, 5);
    let w = sharp_weights(&cfg, 30.0);
    let (_, cache) = forward(&[0, 3, 1, 4, 1, 5], &w).unwrap();
    for layer in &cache.layers {
        for p in &layer.patterns {
            for (i, row) in p.rows().into_iter().enumerate() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
                assert!(row.iter().skip(i + 1).all(|&v| v == 0.0));
            }
        }
    }
}
