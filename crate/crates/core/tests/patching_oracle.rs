// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use std::collections::BTreeSet;

use common::{replay_protocol, toy_setup};
use premise_lab::model::{forward, HeadId};
use premise_lab::patching::{head_influence, influence_map, ProtocolRuns};

#[test]
fn influence_matches_protocol_replay() {
    let (model, insts) = toy_setup(2, 2, 8, 3);
    for q in &insts {
        for l in 0..2 {
            for h in 0..2 {
                let id = HeadId::new(l, h);
                let (clean, patched) = replay_protocol(&model, q, &[id]);
                let e = head_influence(&model, q, id).unwrap();
                assert!((e - (patched - clean)).abs() < 1e-12, "{} {id}: {e} vs {}", q.id, patched - clean);
            }
        }
    }
}

#[test]
fn map_averages_the_per_instance_grids() {
    let (model, insts) = toy_setup(2, 2, 6, 5);
    let map = influence_map(&model, &insts).unwrap();
    for l in 0..2 {
        for h in 0..2 {
            let id = HeadId::new(l, h);
            let es: Vec<f64> = insts.iter().map(|q| head_influence(&model, q, id).unwrap()).collect();
            let mean = es.iter().sum::<f64>() / es.len() as f64;
            let mean_abs = es.iter().map(|e| e.abs()).sum::<f64>() / es.len() as f64;
            assert!((map.mean[[l, h]] - mean).abs() < 1e-12);
            assert!((map.mean_abs[[l, h]] - mean_abs).abs() < 1e-12);
        }
    }
}

#[test]
fn no_patch_reproduces_clean_logits_exactly() {
    let (model, insts) = toy_setup(2, 3, 4, 9);
    for q in &insts {
        let runs = ProtocolRuns::for_instance(&model, q).unwrap();
        let frozen = runs.patched_logits(&model.weights, &BTreeSet::new()).unwrap();
        let (clean, _) = forward(&runs.clean_tokens, &model.weights).unwrap();
        assert_eq!(frozen, clean);
    }
}
