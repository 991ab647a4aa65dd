//! Model parameters, Xavier initialization, and positional encoding.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::SPECIAL_TOKENS;

/// Encoder architecture and regularization settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Fixed token sequence length.
    pub u: usize,
    /// Embedding dimension.
    pub d: usize,
    /// Feed-forward hidden width.
    pub ff_hidden: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub dropout: f64,
    /// Seed for parameter initialization (and dropout when scoring in train
    /// mode outside the training loop).
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            u: 20,
            d: 128,
            ff_hidden: 256,
            n_layers: 2,
            n_heads: 4,
            dropout: 0.05,
            seed: 1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.u < 2 {
            return Err(Error::Config(format!(
                "sequence length must be at least 2, got {}",
                self.u
            )));
        }
        if self.d == 0 || !self.d.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "embedding dimension must be a positive even number, got {}",
                self.d
            )));
        }
        if self.n_heads == 0 || !self.d.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "embedding dimension {} must be divisible by head count {}",
                self.d, self.n_heads
            )));
        }
        if self.n_layers == 0 {
            return Err(Error::Config("need at least one encoder layer".into()));
        }
        if self.ff_hidden == 0 {
            return Err(Error::Config("feed-forward width must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0,1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.n_heads
    }
}

/// Weights of one encoder layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParameters {
    pub w_query: Array2<f64>,
    pub w_key: Array2<f64>,
    pub w_value: Array2<f64>,
    pub w_output: Array2<f64>,
    pub ff_w1: Array2<f64>,
    pub ff_b1: Array1<f64>,
    pub ff_w2: Array2<f64>,
    pub ff_b2: Array1<f64>,
    pub ln1_gain: Array1<f64>,
    pub ln1_offset: Array1<f64>,
    pub ln2_gain: Array1<f64>,
    pub ln2_offset: Array1<f64>,
}

/// All trainable weights: the token embedding table plus encoder layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    /// `(vocab_size, d)` token embedding table.
    pub embedding: Array2<f64>,
    pub layers: Vec<LayerParameters>,
}

impl ModelParameters {
    pub fn vocab_size(&self) -> usize {
        self.embedding.nrows()
    }

    /// Same shapes as `self`, all zeros. Used for gradients and optimizer
    /// moments.
    pub fn zeros_like(&self) -> ModelParameters {
        ModelParameters {
            embedding: Array2::zeros(self.embedding.raw_dim()),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParameters {
                    w_query: Array2::zeros(l.w_query.raw_dim()),
                    w_key: Array2::zeros(l.w_key.raw_dim()),
                    w_value: Array2::zeros(l.w_value.raw_dim()),
                    w_output: Array2::zeros(l.w_output.raw_dim()),
                    ff_w1: Array2::zeros(l.ff_w1.raw_dim()),
                    ff_b1: Array1::zeros(l.ff_b1.raw_dim()),
                    ff_w2: Array2::zeros(l.ff_w2.raw_dim()),
                    ff_b2: Array1::zeros(l.ff_b2.raw_dim()),
                    ln1_gain: Array1::zeros(l.ln1_gain.raw_dim()),
                    ln1_offset: Array1::zeros(l.ln1_offset.raw_dim()),
                    ln2_gain: Array1::zeros(l.ln2_gain.raw_dim()),
                    ln2_offset: Array1::zeros(l.ln2_offset.raw_dim()),
                })
                .collect(),
        }
    }

    /// Flat views of every tensor in a fixed order (embedding first, then per
    /// layer: attention projections, feed-forward, normalization).
    pub fn flat(&self) -> Vec<&[f64]> {
        let mut out = vec![self.embedding.as_slice().expect("standard layout")];
        for l in &self.layers {
            out.push(l.w_query.as_slice().expect("standard layout"));
            out.push(l.w_key.as_slice().expect("standard layout"));
            out.push(l.w_value.as_slice().expect("standard layout"));
            out.push(l.w_output.as_slice().expect("standard layout"));
            out.push(l.ff_w1.as_slice().expect("standard layout"));
            out.push(l.ff_b1.as_slice().expect("standard layout"));
            out.push(l.ff_w2.as_slice().expect("standard layout"));
            out.push(l.ff_b2.as_slice().expect("standard layout"));
            out.push(l.ln1_gain.as_slice().expect("standard layout"));
            out.push(l.ln1_offset.as_slice().expect("standard layout"));
            out.push(l.ln2_gain.as_slice().expect("standard layout"));
            out.push(l.ln2_offset.as_slice().expect("standard layout"));
        }
        out
    }

    /// Mutable counterpart of [`ModelParameters::flat`], same order.
    pub fn flat_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![self.embedding.as_slice_mut().expect("standard layout")];
        for l in &mut self.layers {
            out.push(l.w_query.as_slice_mut().expect("standard layout"));
            out.push(l.w_key.as_slice_mut().expect("standard layout"));
            out.push(l.w_value.as_slice_mut().expect("standard layout"));
            out.push(l.w_output.as_slice_mut().expect("standard layout"));
            out.push(l.ff_w1.as_slice_mut().expect("standard layout"));
            out.push(l.ff_b1.as_slice_mut().expect("standard layout"));
            out.push(l.ff_w2.as_slice_mut().expect("standard layout"));
            out.push(l.ff_b2.as_slice_mut().expect("standard layout"));
            out.push(l.ln1_gain.as_slice_mut().expect("standard layout"));
            out.push(l.ln1_offset.as_slice_mut().expect("standard layout"));
            out.push(l.ln2_gain.as_slice_mut().expect("standard layout"));
            out.push(l.ln2_offset.as_slice_mut().expect("standard layout"));
        }
        out
    }

    /// Tensor names and shapes in [`ModelParameters::flat`] order.
    pub fn tensor_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = vec![(
            "embedding".to_string(),
            self.embedding.shape().to_vec(),
        )];
        for (i, l) in self.layers.iter().enumerate() {
            let named = [
                ("w_query", l.w_query.shape()),
                ("w_key", l.w_key.shape()),
                ("w_value", l.w_value.shape()),
                ("w_output", l.w_output.shape()),
                ("ff_w1", l.ff_w1.shape()),
                ("ff_b1", l.ff_b1.shape()),
                ("ff_w2", l.ff_w2.shape()),
                ("ff_b2", l.ff_b2.shape()),
                ("ln1_gain", l.ln1_gain.shape()),
                ("ln1_offset", l.ln1_offset.shape()),
                ("ln2_gain", l.ln2_gain.shape()),
                ("ln2_offset", l.ln2_offset.shape()),
            ];
            for (name, shape) in named {
                out.push((format!("layer{i}.{name}"), shape.to_vec()));
            }
        }
        out
    }

    /// Whether each tensor in [`ModelParameters::flat`] order receives weight
    /// decay. Matrices do; biases and normalization parameters do not.
    pub fn decay_flags(&self) -> Vec<bool> {
        let mut out = vec![true];
        for _ in &self.layers {
            out.extend([
                true, true, true, true, // attention projections
                true, false, true, false, // ff weights / biases
                false, false, false, false, // layer norm
            ]);
        }
        out
    }

    /// Add `other` element-wise into `self`.
    pub fn add_assign(&mut self, other: &ModelParameters) {
        for (dst, src) in self.flat_mut().into_iter().zip(other.flat()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += *s;
            }
        }
    }

    /// Scale every element by `factor`.
    pub fn scale(&mut self, factor: f64) {
        for dst in self.flat_mut() {
            for d in dst {
                *d *= factor;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.flat()
            .into_iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Half-width of the Xavier uniform range for a matrix with the given fans.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn xavier_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    // fan_in is the second dimension, fan_out the first, matching the usual
    // (out, in) reading of a weight matrix; for the (rows, cols) matrices
    // used here as x @ W the sum is symmetric anyway.
    let bound = xavier_bound(cols, rows);
    Array2::from_shape_fn((rows, cols), |_| (rng.gen::<f64>() * 2.0 - 1.0) * bound)
}

/// Initialize parameters: weight matrices Xavier-uniform, biases and
/// normalization offsets zero, normalization gains one. Deterministic under
/// `config.seed`.
pub fn init_parameters(config: &EncoderConfig, vocab_size: usize) -> Result<ModelParameters> {
    config.validate()?;
    if vocab_size < SPECIAL_TOKENS.len() {
        return Err(Error::Model(format!(
            "vocabulary of size {vocab_size} cannot hold the {} special tokens",
            SPECIAL_TOKENS.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.d;
    let ff = config.ff_hidden;

    let embedding = xavier_matrix(&mut rng, vocab_size, d);
    let layers = (0..config.n_layers)
        .map(|_| LayerParameters {
            w_query: xavier_matrix(&mut rng, d, d),
            w_key: xavier_matrix(&mut rng, d, d),
            w_value: xavier_matrix(&mut rng, d, d),
            w_output: xavier_matrix(&mut rng, d, d),
            ff_w1: xavier_matrix(&mut rng, d, ff),
            ff_b1: Array1::zeros(ff),
            ff_w2: xavier_matrix(&mut rng, ff, d),
            ff_b2: Array1::zeros(d),
            ln1_gain: Array1::ones(d),
            ln1_offset: Array1::zeros(d),
            ln2_gain: Array1::ones(d),
            ln2_offset: Array1::zeros(d),
        })
        .collect();

    Ok(ModelParameters { embedding, layers })
}

/// Sinusoidal positional encoding: `PE(pos, 2k) = sin(pos / 10000^(2k/d))`
/// and `PE(pos, 2k+1) = cos(pos / 10000^(2k/d))`.
pub fn positional_encoding(u: usize, d: usize) -> Result<Array2<f64>> {
    if d == 0 || !d.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "positional encoding requires an even dimension, got {d}"
        )));
    }
    let mut pe = Array2::zeros((u, d));
    for pos in 0..u {
        for k in 0..d / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * k as f64 / d as f64);
            pe[[pos, 2 * k]] = angle.sin();
            pe[[pos, 2 * k + 1]] = angle.cos();
        }
    }
    Ok(pe)
}
