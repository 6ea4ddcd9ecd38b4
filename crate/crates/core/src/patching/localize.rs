// SPDX-License-Identifier: MIT OR Apache-2.0

//! Threshold-and-count head localization plus the random-head baseline.

use std::collections::BTreeSet;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::influence::{influence_map, InfluenceMap};
use crate::dataset::question::QuestionInstance;
use crate::error::{LabError, Result};
use crate::model::{Checkpoint, HeadId, ModelConfig};
use crate::util::write_atomic;

pub const HEADSET_FORMAT: &str = "premise-lab-headset";

/// One selected head with its ranking keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedHead {
    pub head: HeadId,
    pub frequency: usize,
    pub mean_abs: f64,
}

/// An ordered set of heads to constrain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSet {
    pub format: String,
    /// `localized`, `random` or `empty`.
    pub source: String,
    /// Threshold used; `None` when no threshold applies (or it was `-inf`).
    pub tau: Option<f64>,
    pub top_k: usize,
    pub seed: Option<u64>,
    pub provenance: String,
    /// Final-layer heads were left out of the candidate pool.
    #[serde(default)]
    pub skip_final_layer: bool,
    pub heads: Vec<RankedHead>,
}

impl HeadSet {
    pub fn empty() -> Self {
        Self {
            format: HEADSET_FORMAT.into(),
            source: "empty".into(),
            tau: None,
            top_k: 0,
            seed: None,
            provenance: String::new(),
            skip_final_layer: false,
            heads: vec![],
        }
    }

    pub fn ids(&self) -> Vec<HeadId> {
        self.heads.iter().map(|h| h.head).collect()
    }

    pub fn set(&self) -> BTreeSet<HeadId> {
        self.heads.iter().map(|h| h.head).collect()
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    /// Checks format, duplicates and head ranges.
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.format != HEADSET_FORMAT {
            return Err(LabError::Input(format!("not a head set (format {:?})", self.format)));
        }
        let mut seen = BTreeSet::new();
        for r in &self.heads {
            if r.head.layer >= config.num_layers || r.head.head >= config.num_heads {
                return Err(LabError::Index(format!("head {} out of range", r.head)));
            }
            if !seen.insert(r.head) {
                return Err(LabError::Input(format!("head {} listed twice", r.head)));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(LabError::MissingArtifact(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        // an empty file stands for the empty head set
        if text.trim().is_empty() {
            return Ok(Self::empty());
        }
        let set: HeadSet = serde_json::from_str(&text)?;
        if set.format != HEADSET_FORMAT {
            return Err(LabError::Format {
                path: path.display().to_string(),
                reason: format!("expected format {HEADSET_FORMAT:?}"),
            });
        }
        Ok(set)
    }
}

/// Heads in row-major order, optionally without the final layer.
///
/// A final-layer head constrained on the span only changes span-row logits,
/// which no later position reads, so it can never alter a generated answer.
pub fn candidate_heads(num_layers: usize, num_heads: usize, skip_final_layer: bool) -> Vec<HeadId> {
    let layers = if skip_final_layer && num_layers > 1 { num_layers - 1 } else { num_layers };
    (0..layers * num_heads)
        .map(|i| HeadId::new(i / num_heads, i % num_heads))
        .collect()
}

/// Ranks heads by pass frequency, then mean `|E|`, then `(layer, head)`.
pub fn localize_from_map(map: &InfluenceMap, tau: f64, top_k: usize, provenance: &str) -> Result<HeadSet> {
    localize_among(map, tau, top_k, false, provenance)
}

/// [`localize_from_map`] restricted to [`candidate_heads`].
pub fn localize_among(
    map: &InfluenceMap,
    tau: f64,
    top_k: usize,
    skip_final_layer: bool,
    provenance: &str,
) -> Result<HeadSet> {
    if tau.is_nan() {
        return Err(LabError::Config("tau must not be NaN".into()));
    }
    let pool: BTreeSet<HeadId> = candidate_heads(map.num_layers, map.num_heads, skip_final_layer)
        .into_iter()
        .collect();
    let counts = map.pass_counts(tau);
    let mut ranked: Vec<RankedHead> = counts
        .indexed_iter()
        .filter(|((l, h), &c)| c > 0 && pool.contains(&HeadId::new(*l, *h)))
        .map(|((l, h), &c)| RankedHead {
            head: HeadId::new(l, h),
            frequency: c,
            mean_abs: map.mean_abs[[l, h]],
        })
        .collect();
    if ranked.is_empty() {
        return Err(LabError::EmptyLocalization {
            tau,
            instances: map.per_instance.len(),
            max_influence: map
                .per_instance
                .iter()
                .flat_map(|(_, g)| pool.iter().map(move |h| g[[h.layer, h.head]]))
                .fold(f64::NEG_INFINITY, f64::max),
        });
    }
    ranked.sort_by(|a, b| {
        b.frequency
            .cmp(&a.frequency)
            .then(b.mean_abs.total_cmp(&a.mean_abs))
            .then(a.head.cmp(&b.head))
    });
    ranked.truncate(top_k);
    Ok(HeadSet {
        format: HEADSET_FORMAT.into(),
        source: "localized".into(),
        tau: tau.is_finite().then_some(tau),
        top_k,
        seed: None,
        provenance: provenance.into(),
        skip_final_layer,
        heads: ranked,
    })
}

/// Computes the influence map of `instances` and localizes on it.
pub fn localize_heads(
    model: &Checkpoint,
    instances: &[QuestionInstance],
    tau: f64,
    top_k: usize,
    skip_final_layer: bool,
    provenance: &str,
) -> Result<(HeadSet, InfluenceMap)> {
    let map = influence_map(model, instances)?;
    let set = localize_among(&map, tau, top_k, skip_final_layer, provenance)?;
    Ok((set, map))
}

/// `k` distinct heads drawn uniformly (partial Fisher-Yates over row-major head order).
pub fn random_headset(seed: u64, k: usize, config: &ModelConfig) -> Result<HeadSet> {
    random_among(seed, k, config, false)
}

/// [`random_headset`] drawn from [`candidate_heads`].
pub fn random_among(seed: u64, k: usize, config: &ModelConfig, skip_final_layer: bool) -> Result<HeadSet> {
    let mut all = candidate_heads(config.num_layers, config.num_heads, skip_final_layer);
    let total = all.len();
    if k > total {
        return Err(LabError::Input(format!("cannot draw {k} heads from {total}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..k {
        let j = rng.random_range(i..total);
        all.swap(i, j);
    }
    Ok(HeadSet {
        format: HEADSET_FORMAT.into(),
        source: "random".into(),
        tau: None,
        top_k: k,
        seed: Some(seed),
        provenance: String::new(),
        skip_final_layer,
        heads: all[..k]
            .iter()
            .map(|&head| RankedHead {
                head,
                frequency: 0,
                mean_abs: 0.0,
            })
            .collect(),
    })
}

/// Head count for a fraction of all heads, at least one.
pub fn heads_for_fraction(config: &ModelConfig, fraction: f64) -> usize {
    let total = (config.num_layers * config.num_heads) as f64;
    ((fraction * total).round() as usize).max(1)
}
