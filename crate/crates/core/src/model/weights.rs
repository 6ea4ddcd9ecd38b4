// SPDX-License-Identifier: MIT OR Apache-2.0

//! Parameter storage.
//!
//! Every tensor is a standard-layout (row-major) ndarray so it can be viewed
//! as a flat slice by the optimizer and the checkpoint writer. The same
//! struct doubles as the gradient accumulator.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::error::{LabError, Result};

/// Standard deviation of the Gaussian initializer.
pub const INIT_STD: f64 = 0.02;

/// Projections of one attention head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadWeights {
    /// `d x d_h`
    pub w_q: Array2<f64>,
    /// `d x d_h`
    pub w_k: Array2<f64>,
    /// `d x d_h`
    pub w_v: Array2<f64>,
    /// `d_h x d`
    pub w_o: Array2<f64>,
}

/// One residual layer: attention heads plus a bias-free MLP `f(x K^T) V`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub heads: Vec<HeadWeights>,
    /// `K`, `dm x d`
    pub mlp_in: Array2<f64>,
    /// `V`, `dm x d`
    pub mlp_out: Array2<f64>,
}

/// All parameters of the toy transformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub config: ModelConfig,
    /// `V x d`
    pub token_embedding: Array2<f64>,
    /// `max_seq_len x d`, learned.
    pub position_embedding: Array2<f64>,
    pub layers: Vec<LayerWeights>,
    pub ln_gain: Array1<f64>,
    pub ln_bias: Array1<f64>,
    /// `W_U`, `d x V`
    pub unembedding: Array2<f64>,
}

fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng, normal: &Normal<f64>) -> Array2<f64> {
    let data: Vec<f64> = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    Array2::from_shape_vec((rows, cols), data).expect("shape matches data length")
}

impl Weights {
    /// Seeded Gaussian initialization (std 0.02); layer norm gain 1, bias 0.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let (d, dh, dm) = (config.model_dim, config.head_dim, config.mlp_dim);
        let token_embedding = gaussian(config.vocab_size, d, &mut rng, &normal);
        let position_embedding = gaussian(config.max_seq_len, d, &mut rng, &normal);
        let layers = (0..config.num_layers)
            .map(|_| LayerWeights {
                heads: (0..config.num_heads)
                    .map(|_| HeadWeights {
                        w_q: gaussian(d, dh, &mut rng, &normal),
                        w_k: gaussian(d, dh, &mut rng, &normal),
                        w_v: gaussian(d, dh, &mut rng, &normal),
                        w_o: gaussian(dh, d, &mut rng, &normal),
                    })
                    .collect(),
                mlp_in: gaussian(dm, d, &mut rng, &normal),
                mlp_out: gaussian(dm, d, &mut rng, &normal),
            })
            .collect();
        let unembedding = gaussian(d, config.vocab_size, &mut rng, &normal);
        Ok(Self {
            config: config.clone(),
            token_embedding,
            position_embedding,
            layers,
            ln_gain: Array1::ones(d),
            ln_bias: Array1::zeros(d),
            unembedding,
        })
    }

    /// All-zero tensors of the same shapes (gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        let z = |a: &Array2<f64>| Array2::zeros(a.raw_dim());
        Self {
            config: self.config.clone(),
            token_embedding: z(&self.token_embedding),
            position_embedding: z(&self.position_embedding),
            layers: self
                .layers
                .iter()
                .map(|l| LayerWeights {
                    heads: l
                        .heads
                        .iter()
                        .map(|h| HeadWeights {
                            w_q: z(&h.w_q),
                            w_k: z(&h.w_k),
                            w_v: z(&h.w_v),
                            w_o: z(&h.w_o),
                        })
                        .collect(),
                    mlp_in: z(&l.mlp_in),
                    mlp_out: z(&l.mlp_out),
                })
                .collect(),
            ln_gain: Array1::zeros(self.ln_gain.len()),
            ln_bias: Array1::zeros(self.ln_bias.len()),
            unembedding: z(&self.unembedding),
        }
    }

    /// Names of every tensor, in canonical order.
    pub fn tensor_names(config: &ModelConfig) -> Vec<String> {
        let mut names = vec!["token_embedding".to_string(), "position_embedding".to_string()];
        for l in 0..config.num_layers {
            for h in 0..config.num_heads {
                for p in ["w_q", "w_k", "w_v", "w_o"] {
                    names.push(format!("layers.{l}.heads.{h}.{p}"));
                }
            }
            names.push(format!("layers.{l}.mlp_in"));
            names.push(format!("layers.{l}.mlp_out"));
        }
        names.extend(["ln_gain", "ln_bias", "unembedding"].map(String::from));
        names
    }

    /// Expected shape of every tensor, aligned with [`Weights::tensor_names`].
    pub fn expected_shapes(config: &ModelConfig) -> Vec<Vec<usize>> {
        let (d, dh, dm) = (config.model_dim, config.head_dim, config.mlp_dim);
        let mut shapes = vec![vec![config.vocab_size, d], vec![config.max_seq_len, d]];
        for _ in 0..config.num_layers {
            for _ in 0..config.num_heads {
                shapes.extend([vec![d, dh], vec![d, dh], vec![d, dh], vec![dh, d]]);
            }
            shapes.push(vec![dm, d]);
            shapes.push(vec![dm, d]);
        }
        shapes.extend([vec![d], vec![d], vec![d, config.vocab_size]]);
        shapes
    }

    /// Flat read-only views of every tensor, canonical order.
    pub fn flat(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![
            self.token_embedding.as_slice().expect("standard layout"),
            self.position_embedding.as_slice().expect("standard layout"),
        ];
        for l in &self.layers {
            for h in &l.heads {
                for m in [&h.w_q, &h.w_k, &h.w_v, &h.w_o] {
                    out.push(m.as_slice().expect("standard layout"));
                }
            }
            out.push(l.mlp_in.as_slice().expect("standard layout"));
            out.push(l.mlp_out.as_slice().expect("standard layout"));
        }
        out.push(self.ln_gain.as_slice().expect("standard layout"));
        out.push(self.ln_bias.as_slice().expect("standard layout"));
        out.push(self.unembedding.as_slice().expect("standard layout"));
        out
    }

    /// Flat mutable views of every tensor, canonical order.
    pub fn flat_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.token_embedding.as_slice_mut().expect("standard layout"),
            self.position_embedding.as_slice_mut().expect("standard layout"),
        ];
        for l in &mut self.layers {
            for h in &mut l.heads {
                out.push(h.w_q.as_slice_mut().expect("standard layout"));
                out.push(h.w_k.as_slice_mut().expect("standard layout"));
                out.push(h.w_v.as_slice_mut().expect("standard layout"));
                out.push(h.w_o.as_slice_mut().expect("standard layout"));
            }
            out.push(l.mlp_in.as_slice_mut().expect("standard layout"));
            out.push(l.mlp_out.as_slice_mut().expect("standard layout"));
        }
        out.push(self.ln_gain.as_slice_mut().expect("standard layout"));
        out.push(self.ln_bias.as_slice_mut().expect("standard layout"));
        out.push(self.unembedding.as_slice_mut().expect("standard layout"));
        out
    }

    /// Rebuilds weights from flat tensors, validating every shape.
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<(String, Vec<usize>, Vec<f64>)>) -> Result<Self> {
        config.validate()?;
        let names = Self::tensor_names(config);
        let shapes = Self::expected_shapes(config);
        if tensors.len() != names.len() {
            return Err(LabError::Shape(format!(
                "expected {} tensors, found {}",
                names.len(),
                tensors.len()
            )));
        }
        let mut w = Self::init(&ModelConfig { rng_seed: 0, ..config.clone() })?;
        w.config = config.clone();
        for (k, ((name, shape, data), slot)) in tensors.into_iter().zip(w.flat_mut()).enumerate() {
            if name != names[k] {
                return Err(LabError::Shape(format!("tensor {k}: expected {}, found {name}", names[k])));
            }
            if shape != shapes[k] {
                return Err(LabError::Shape(format!("{name}: expected shape {:?}, found {shape:?}", shapes[k])));
            }
            if data.len() != shape.iter().product::<usize>() || data.len() != slot.len() {
                return Err(LabError::Shape(format!(
                    "{name}: shape {shape:?} needs {} values, found {}",
                    shape.iter().product::<usize>(),
                    data.len()
                )));
            }
            slot.copy_from_slice(&data);
        }
        Ok(w)
    }

    /// True when no parameter is NaN or infinite.
    pub fn is_finite(&self) -> bool {
        self.flat().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Number of scalar parameters.
    pub fn num_parameters(&self) -> usize {
        self.flat().iter().map(|t| t.len()).sum()
    }

    /// Zeroes both MLP matrices of every layer.
    pub fn zero_mlps(&mut self) {
        for l in &mut self.layers {
            l.mlp_in.fill(0.0);
            l.mlp_out.fill(0.0);
        }
    }
}
