// SPDX-License-Identifier: MIT OR Apache-2.0

//! Sequence-level uncertainty scores and ROC/AUC evaluation.
//!
//! * `U1` — mean negative log-likelihood of one answer;
//! * `U2` — mean `U1` over `k` sampled answers;
//! * `U3` — `-(1/(K1+1)) [ sum_{incorrect} U1 + ln sum_{correct} exp(U1) ]`,
//!   evaluated literally; an empty sum is left out.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::lm::{answer_with, Decoding};
use crate::model::{Checkpoint, Strategy, TokenSequence};
use crate::util::contains_ci;

/// One decoded answer with per-token log-probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerSample {
    pub tokens: TokenSequence,
    pub logprobs: Vec<f64>,
    pub correct: bool,
}

impl AnswerSample {
    pub fn validate(&self) -> Result<()> {
        if self.logprobs.is_empty() {
            return Err(LabError::Input("answer has no tokens".into()));
        }
        if self.logprobs.len() != self.tokens.len() {
            return Err(LabError::Input(format!(
                "{} log-probabilities for {} tokens",
                self.logprobs.len(),
                self.tokens.len()
            )));
        }
        if let Some(lp) = self.logprobs.iter().find(|lp| lp.is_nan() || **lp > 0.0) {
            return Err(LabError::Input(format!("log-probability {lp} is not <= 0")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    U1,
    U2,
    U3,
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyScore {
    pub metric: Metric,
    pub value: f64,
}

fn mean_nll(logprobs: &[f64]) -> Result<f64> {
    if logprobs.is_empty() {
        return Err(LabError::Input("empty answer".into()));
    }
    Ok(-logprobs.iter().sum::<f64>() / logprobs.len() as f64)
}

pub fn u1_ppl(answer: &AnswerSample) -> Result<UncertaintyScore> {
    answer.validate()?;
    Ok(UncertaintyScore {
        metric: Metric::U1,
        value: mean_nll(&answer.logprobs)?,
    })
}

pub fn u2_from_samples(samples: &[AnswerSample]) -> Result<UncertaintyScore> {
    if samples.is_empty() {
        return Err(LabError::Input("U2 needs k >= 1 samples".into()));
    }
    let mut total = 0.0;
    for s in samples {
        total += u1_ppl(s)?.value;
    }
    Ok(UncertaintyScore {
        metric: Metric::U2,
        value: total / samples.len() as f64,
    })
}

pub fn u3_from_samples(samples: &[AnswerSample]) -> Result<UncertaintyScore> {
    if samples.is_empty() {
        return Err(LabError::Input("U3 needs k >= 1 samples".into()));
    }
    let mut incorrect = Vec::new();
    let mut correct = Vec::new();
    for s in samples {
        let u = u1_ppl(s)?.value;
        if s.correct {
            correct.push(u);
        } else {
            incorrect.push(u);
        }
    }
    let mut inner: f64 = incorrect.iter().sum();
    if !correct.is_empty() {
        let m = correct.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        inner += m + correct.iter().map(|u| (u - m).exp()).sum::<f64>().ln();
    }
    Ok(UncertaintyScore {
        metric: Metric::U3,
        value: -inner / (incorrect.len() as f64 + 1.0),
    })
}

/// Per-draw seeds derived from one experiment seed.
pub fn draw_seeds(seed: u64, k: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k).map(|_| rng.random()).collect()
}

/// `k` temperature samples of the answer to `question`; correctness is
/// containment of `gold` when given.
pub fn sample_answers(
    model: &Checkpoint,
    question: &str,
    k: usize,
    temperature: f64,
    seed: u64,
    max_new: usize,
    gold: Option<&str>,
) -> Result<Vec<AnswerSample>> {
    if k == 0 {
        return Err(LabError::Input("k must be >= 1".into()));
    }
    draw_seeds(seed, k)
        .into_iter()
        .map(|s| {
            let decoding = Decoding {
                strategy: Strategy::Sample { temperature, seed: s },
                max_new,
            };
            let g = answer_with(&model.weights, model, question, decoding)?;
            let correct = match gold {
                Some(o) => contains_ci(&model.vocab.decode_content(&g.ids)?, o),
                None => false,
            };
            Ok(AnswerSample {
                tokens: model.vocab.sequence(g.ids)?,
                logprobs: g.logprobs,
                correct,
            })
        })
        .collect()
}

pub fn u2_sampling(model: &Checkpoint, question: &str, k: usize, temperature: f64, seed: u64, max_new: usize) -> Result<UncertaintyScore> {
    u2_from_samples(&sample_answers(model, question, k, temperature, seed, max_new, None)?)
}

#[allow(clippy::too_many_arguments)]
pub fn u3_semantic(
    model: &Checkpoint,
    question: &str,
    k: usize,
    gold_object: &str,
    temperature: f64,
    seed: u64,
    max_new: usize,
) -> Result<UncertaintyScore> {
    u3_from_samples(&sample_answers(model, question, k, temperature, seed, max_new, Some(gold_object))?)
}

fn check_auc_input(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(LabError::Input(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(LabError::Input(format!("score {s} is not finite")));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(LabError::Evaluation(format!(
            "AUC needs both classes (got {pos} positive, {neg} negative)"
        )));
    }
    Ok((pos, neg))
}

/// Mann-Whitney AUC: probability that a positive outranks a negative, ties ½.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_auc_input(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average 1-based ranks over tie groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum_pos += avg;
            }
        }
        i = j + 1;
    }
    let p = pos as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// ROC points `(fpr, tpr)` from the strictest to the loosest threshold,
/// starting at `(0, 0)` and ending at `(1, 1)`.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    let (pos, neg) = check_auc_input(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(points)
}

/// Area under a piecewise-linear ROC curve (trapezoids).
pub fn roc_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// Per-question metrics as emitted to JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub instance: String,
    pub template: String,
    pub answer: String,
    pub hallucinated: bool,
    pub u1: f64,
    pub u2: f64,
    pub u3: f64,
    pub seed: u64,
}

pub fn records_to_jsonl(records: &[ScoreRecord]) -> Result<String> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn roc_to_csv(metric: Metric, points: &[(f64, f64)]) -> String {
    let mut s = String::from("metric,fpr,tpr\n");
    for (f, t) in points {
        s.push_str(&format!("{metric},{f},{t}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(lps: &[f64], correct: bool) -> AnswerSample {
        AnswerSample {
            tokens: TokenSequence {
                ids: vec![0; lps.len()],
                surface: String::new(),
            },
            logprobs: lps.to_vec(),
            correct,
        }
    }

    #[test]
    fn u1_closed_forms() {
        assert_eq!(u1_ppl(&sample(&[0.0, 0.0], true)).unwrap().value, 0.0);
        assert_eq!(u1_ppl(&sample(&[-2.0, -2.0, -2.0], true)).unwrap().value, 2.0);
        assert!(u1_ppl(&sample(&[], true)).is_err());
        assert!(u1_ppl(&sample(&[0.5], true)).is_err());
    }

    #[test]
    fn u2_is_the_mean() {
        let s = [sample(&[-1.0], false), sample(&[-3.0], false)];
        assert_eq!(u2_from_samples(&s).unwrap().value, 2.0);
        assert_eq!(u2_from_samples(&s[..1]).unwrap().value, 1.0);
        assert!(u2_from_samples(&[]).is_err());
    }

    #[test]
    fn u3_literal_formula() {
        let wrong = [sample(&[-1.0], false), sample(&[-3.0], false)];
        assert!((u3_from_samples(&wrong).unwrap().value + 4.0 / 3.0).abs() < 1e-15);
        let u = 0.7;
        let right = vec![sample(&[-u], true); 4];
        assert!((u3_from_samples(&right).unwrap().value + (u + 4f64.ln())).abs() < 1e-12);
        // monotone decreasing in each incorrect U1
        let worse = [sample(&[-1.5], false), sample(&[-3.0], false)];
        assert!(u3_from_samples(&worse).unwrap().value < u3_from_samples(&wrong).unwrap().value);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        // 3 of the 4 positive/negative pairs are ordered correctly
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap(), 0.75);
        assert_eq!(auc(&[0.5, 0.5], &[false, true]).unwrap(), 0.5);
        assert!(matches!(auc(&[0.1, 0.2], &[true, true]), Err(LabError::Evaluation(_))));
    }

    #[test]
    fn roc_area_matches_auc() {
        let s = [0.1, 0.4, 0.35, 0.8, 0.4, 0.2];
        let l = [false, false, true, true, true, false];
        let pts = roc_curve(&s, &l).unwrap();
        assert_eq!(pts.first(), Some(&(0.0, 0.0)));
        assert_eq!(pts.last(), Some(&(1.0, 1.0)));
        assert!((roc_area(&pts) - auc(&s, &l).unwrap()).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn complement_labels_sum_to_one(scores in proptest::collection::hash_set(0i32..10_000, 2..40)) {
            let s: Vec<f64> = scores.into_iter().map(|v| v as f64).collect();
            let l: Vec<bool> = (0..s.len()).map(|i| i % 2 == 0).collect();
            let flipped: Vec<bool> = l.iter().map(|b| !b).collect();
            let total = auc(&s, &l).unwrap() + auc(&s, &flipped).unwrap();
            proptest::prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
