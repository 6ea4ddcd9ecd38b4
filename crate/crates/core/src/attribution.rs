// SPDX-License-Identifier: MIT OR Apache-2.0

//! Attention-gradient attribution `S_l = |sum_h A_l^h * dL/dA_l^h|` and its
//! aggregation over the subject / false-object / other partition of the
//! cloze prompt's last row.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::question::{build_cloze, cloze_target, QuestionInstance};
use crate::error::{LabError, Result};
use crate::model::{loss_and_attention_grads, ActivationCache, Checkpoint, GradientCache};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionMatrix {
    pub layer: usize,
    pub s: Array2<f64>,
}

/// Per-layer averages of the last row over each partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSummary {
    pub layer: usize,
    pub s_subject: f64,
    pub s_false_object: f64,
    pub s_other: f64,
    pub n_subject: usize,
    pub n_false_object: usize,
    pub n_other: usize,
}

pub fn attribution_matrix(cache: &ActivationCache, grads: &GradientCache, layer: usize) -> Result<AttributionMatrix> {
    if layer >= cache.layers.len() || layer >= grads.pattern_grads.len() {
        return Err(LabError::Index(format!("layer {layer} out of range")));
    }
    let n = cache.seq_len();
    if grads.seq_len() != n {
        return Err(LabError::Shape(format!(
            "gradients are for length {}, activations for length {n}",
            grads.seq_len()
        )));
    }
    let patterns = &cache.layers[layer].patterns;
    let dpat = &grads.pattern_grads[layer];
    if patterns.len() != dpat.len() {
        return Err(LabError::Shape(format!("{} patterns vs {} gradients", patterns.len(), dpat.len())));
    }
    let mut acc = Array2::<f64>::zeros((n, n));
    for (a, g) in patterns.iter().zip(dpat) {
        if g.dim() != (n, n) {
            return Err(LabError::Shape(format!("gradient block {:?}, expected {:?}", g.dim(), (n, n))));
        }
        acc += &(a * g);
    }
    Ok(AttributionMatrix {
        layer,
        s: acc.mapv(f64::abs),
    })
}

pub fn flow_summary(s: &AttributionMatrix, instance: &QuestionInstance) -> Result<FlowSummary> {
    let n = s.s.nrows();
    let (sub, fo) = (instance.subject_span, instance.false_object_span);
    if sub.end > n || fo.end > n {
        return Err(LabError::Index(format!(
            "instance {}: spans exceed the {n}-token prompt",
            instance.id
        )));
    }
    let last = s.s.row(n - 1);
    let (mut ss, mut sf, mut so) = (0.0, 0.0, 0.0);
    let (mut ns, mut nf, mut no) = (0usize, 0usize, 0usize);
    for (i, &v) in last.iter().enumerate() {
        if sub.contains(i) {
            ss += v;
            ns += 1;
        } else if fo.contains(i) {
            sf += v;
            nf += 1;
        } else {
            so += v;
            no += 1;
        }
    }
    for (name, count) in [("subject", ns), ("false-object", nf), ("other", no)] {
        if count == 0 {
            return Err(LabError::Partition(format!("instance {}: empty {name} partition", instance.id)));
        }
    }
    Ok(FlowSummary {
        layer: s.layer,
        s_subject: ss / ns as f64,
        s_false_object: sf / nf as f64,
        s_other: so / no as f64,
        n_subject: ns,
        n_false_object: nf,
        n_other: no,
    })
}

/// Attribution matrices of every layer on the instance's cloze prompt.
pub fn instance_attribution(model: &Checkpoint, instance: &QuestionInstance) -> Result<Vec<AttributionMatrix>> {
    let cloze = build_cloze(instance, &model.vocab, model.weights.config.max_seq_len)?;
    let target = cloze_target(instance, &model.vocab)?;
    let (_, grads, cache) = loss_and_attention_grads(&cloze.ids, cloze.len() - 1, target, &model.weights)?;
    (0..model.weights.config.num_layers)
        .map(|l| attribution_matrix(&cache, &grads, l))
        .collect()
}

pub fn instance_flow(model: &Checkpoint, instance: &QuestionInstance) -> Result<Vec<FlowSummary>> {
    instance_attribution(model, instance)?
        .iter()
        .map(|s| flow_summary(s, instance))
        .collect()
}

/// Per-layer mean of several instances' flows.
pub fn mean_flow(flows: &[Vec<FlowSummary>]) -> Result<Vec<FlowSummary>> {
    let first = flows.first().ok_or_else(|| LabError::Input("no flows to average".into()))?;
    let n = flows.len() as f64;
    let mut out = first.clone();
    for (l, f) in out.iter_mut().enumerate() {
        f.s_subject = flows.iter().map(|x| x[l].s_subject).sum::<f64>() / n;
        f.s_false_object = flows.iter().map(|x| x[l].s_false_object).sum::<f64>() / n;
        f.s_other = flows.iter().map(|x| x[l].s_other).sum::<f64>() / n;
    }
    Ok(out)
}

/// `layer,s_subject,s_false_object,s_other,cohort` rows.
pub fn flow_csv(cohorts: &[(&str, Vec<FlowSummary>)]) -> String {
    let mut s = String::from("layer,s_subject,s_false_object,s_other,cohort\n");
    for (name, flow) in cohorts {
        for f in flow {
            s.push_str(&format!(
                "{},{:e},{:e},{:e},{name}\n",
                f.layer, f.s_subject, f.s_false_object, f.s_other
            ));
        }
    }
    s
}
