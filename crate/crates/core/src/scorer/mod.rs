//! The anomaly scoring function: a transformer encoder over embedded token
//! sequences whose `[CLS]` output norm is the anomaly score, with the
//! hyperspherical loss and exact gradients for training.

mod backward;
mod checkpoint;
mod forward;
mod loss;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use loss::{hyperspherical_loss, LOG_FLOOR};
pub use params::{
    init_parameters, positional_encoding, xavier_bound, EncoderConfig, LayerParameters,
    ModelParameters,
};

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};

use forward::{forward_chunk, make_dropout_masks, CHUNK};
use loss::{sample_loss, sample_loss_d_score_sq};

/// Whether dropout is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Encoder output for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreOutput {
    /// Output vector at the `[CLS]` position.
    pub z: Vec<f64>,
    /// Euclidean norm of `z`; the anomaly score.
    pub score: f64,
}

/// Score a single sequence. In [`Mode::Train`] dropout is applied with masks
/// drawn from `config.seed`; [`Mode::Eval`] is deterministic.
pub fn forward_score(
    ids: &[u32],
    params: &ModelParameters,
    config: &EncoderConfig,
    mode: Mode,
) -> Result<ScoreOutput> {
    config.validate()?;
    let pe = positional_encoding(config.u, config.d)?;
    let masks = match mode {
        Mode::Train if config.dropout > 0.0 => {
            Some(make_dropout_masks(&[config.seed], config))
        }
        _ => None,
    };
    let fwd = forward_chunk(
        std::slice::from_ref(&ids.to_vec()),
        params,
        config,
        &pe,
        masks,
        false,
    )?;
    Ok(ScoreOutput {
        z: fwd.z.row(0).to_vec(),
        score: fwd.scores[0],
    })
}

/// Score a batch in eval mode. Chunks run in parallel; outputs keep input
/// order, so parallel and serial runs agree bit-exactly.
pub fn score_sequences(
    ids_batch: &[Vec<u32>],
    params: &ModelParameters,
    config: &EncoderConfig,
) -> Result<Vec<ScoreOutput>> {
    config.validate()?;
    let pe = positional_encoding(config.u, config.d)?;
    let chunk_outputs: Vec<Vec<ScoreOutput>> = ids_batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let fwd = forward_chunk(chunk, params, config, &pe, None, false)?;
            Ok(fwd
                .scores
                .iter()
                .enumerate()
                .map(|(i, &score)| ScoreOutput {
                    z: fwd.z.row(i).to_vec(),
                    score,
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(chunk_outputs.into_iter().flatten().collect())
}

/// Gradients of the mean batch loss, with the loss value and scores.
#[derive(Debug)]
pub struct BatchGradients {
    pub mean_loss: f64,
    pub gradients: ModelParameters,
    pub scores: Vec<f64>,
}

/// Forward and backward over a batch: returns gradients of the mean
/// hyperspherical loss with respect to every parameter.
///
/// `dropout_seeds`, when given with a positive configured dropout, enables
/// train-mode dropout with one seed per sequence; `None` runs without
/// dropout (the eval path), which is also what gradient checks use.
pub fn batch_gradients(
    ids_batch: &[Vec<u32>],
    labels: &[u8],
    params: &ModelParameters,
    config: &EncoderConfig,
    dropout_seeds: Option<&[u64]>,
) -> Result<BatchGradients> {
    config.validate()?;
    if ids_batch.is_empty() {
        return Err(Error::Model("empty batch".into()));
    }
    if ids_batch.len() != labels.len() {
        return Err(Error::Model(format!(
            "{} sequences but {} labels",
            ids_batch.len(),
            labels.len()
        )));
    }
    if let Some(seeds) = dropout_seeds {
        if seeds.len() != ids_batch.len() {
            return Err(Error::Model(format!(
                "{} sequences but {} dropout seeds",
                ids_batch.len(),
                seeds.len()
            )));
        }
    }
    let pe = positional_encoding(config.u, config.d)?;
    let n = ids_batch.len();

    struct ChunkResult {
        grads: ModelParameters,
        loss_sum: f64,
        scores: Vec<f64>,
    }

    let n_chunks = n.div_ceil(CHUNK);
    let results: Vec<ChunkResult> = (0..n_chunks)
        .into_par_iter()
        .map(|ci| {
            let lo = ci * CHUNK;
            let hi = ((ci + 1) * CHUNK).min(n);
            let ids = &ids_batch[lo..hi];
            let lbl = &labels[lo..hi];
            let masks = match dropout_seeds {
                Some(seeds) if config.dropout > 0.0 => {
                    Some(make_dropout_masks(&seeds[lo..hi], config))
                }
                _ => None,
            };
            let fwd = forward_chunk(ids, params, config, &pe, masks, true)?;

            let m = ids.len();
            let mut d_z = Array2::zeros((m, config.d));
            let mut loss_sum = 0.0;
            for (i, &label) in lbl.iter().enumerate() {
                let z = fwd.z.row(i);
                let score_sq: f64 = z.iter().map(|v| v * v).sum();
                loss_sum += sample_loss(score_sq, label);
                let factor = 2.0 * sample_loss_d_score_sq(score_sq, label);
                let mut out = d_z.row_mut(i);
                for c in 0..config.d {
                    out[c] = factor * z[c];
                }
            }
            let grads = backward::backward_chunk(&fwd.cache, params, config, &d_z)?;
            Ok(ChunkResult {
                grads,
                loss_sum,
                scores: fwd.scores,
            })
        })
        .collect::<Result<_>>()?;

    // Deterministic reduction: chunk order is fixed by index, so the
    // floating-point sums never depend on thread scheduling.
    let mut iter = results.into_iter();
    let first = iter.next().expect("at least one chunk");
    let mut gradients = first.grads;
    let mut loss_sum = first.loss_sum;
    let mut scores = first.scores;
    for r in iter {
        gradients.add_assign(&r.grads);
        loss_sum += r.loss_sum;
        scores.extend(r.scores);
    }
    gradients.scale(1.0 / n as f64);
    let mean_loss = loss_sum / n as f64;
    if !mean_loss.is_finite() {
        return Err(Error::NonFinite {
            location: "batch loss".into(),
        });
    }
    Ok(BatchGradients {
        mean_loss,
        gradients,
        scores,
    })
}
