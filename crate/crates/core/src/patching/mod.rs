// SPDX-License-Identifier: MIT OR Apache-2.0

//! Causal analysis of attention heads and constrained inference.

pub mod constrain;
pub mod influence;
pub mod localize;

pub use constrain::{constrained_forward, evaluate_accuracy, mitigate_generate, Constrained};
pub use influence::{head_influence, influence_map, masked_prompt, InfluenceMap, ProtocolRuns};
pub use localize::{
    candidate_heads, heads_for_fraction, localize_among, localize_from_map, localize_heads, random_among, random_headset,
    HeadSet, RankedHead,
};
