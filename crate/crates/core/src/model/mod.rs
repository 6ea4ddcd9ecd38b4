// SPDX-License-Identifier: MIT OR Apache-2.0

//! The toy decoder-only transformer: parameters, forward and backward
//! passes, training, decoding and checkpoints.

pub mod backward;
pub mod checkpoint;
pub mod config;
pub mod forward;
pub mod generate;
pub mod tokenizer;
pub mod train;
pub mod weights;

pub use backward::{loss_and_attention_grads, GradientCache};
pub use checkpoint::Checkpoint;
pub use config::ModelConfig;
pub use forward::{forward, forward_with_hooks, ActivationCache, HeadId, Hooks};
pub use generate::{generate, Generation, LogitSource, Strategy};
pub use tokenizer::{TokenSequence, Vocabulary};
pub use train::{train, train_examples, Example, TrainParams, Trained};
pub use weights::Weights;
