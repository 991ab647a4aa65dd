//! Batched encoder forward pass with cached intermediates for the backward
//! pass.
//!
//! A batch is processed in fixed-size chunks so that matrix products are
//! large enough to be efficient while results stay bit-identical regardless
//! of how many worker threads are active.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tokenizer::PAD_ID;

use super::params::{EncoderConfig, ModelParameters};

/// Fixed chunk width; summation order over chunks never depends on the
/// thread count.
pub(crate) const CHUNK: usize = 64;

/// Variance floor inside layer normalization.
pub(crate) const LN_EPS: f64 = 1e-5;

/// Inverted-dropout scale masks, one row block per sequence.
pub(crate) struct DropoutMasks {
    pub emb: Array2<f64>,
    /// One `(attention site, feed-forward site)` pair per layer.
    pub per_layer: Vec<(Array2<f64>, Array2<f64>)>,
}

/// Build dropout masks for a chunk, drawing each sequence's masks from its
/// own seed: first the embedding site, then per layer the attention and
/// feed-forward sites. Entries are `0` (dropped) or `1/(1-p)` (kept).
pub(crate) fn make_dropout_masks(
    seeds: &[u64],
    cfg: &EncoderConfig,
) -> DropoutMasks {
    let m = seeds.len();
    let (u, d, p) = (cfg.u, cfg.d, cfg.dropout);
    let scale = 1.0 / (1.0 - p);
    let mut emb = Array2::zeros((m * u, d));
    let mut per_layer: Vec<(Array2<f64>, Array2<f64>)> = (0..cfg.n_layers)
        .map(|_| (Array2::zeros((m * u, d)), Array2::zeros((m * u, d))))
        .collect();
    for (seq, &seed) in seeds.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = seq * u..(seq + 1) * u;
        let fill = |block: &mut Array2<f64>, rng: &mut ChaCha8Rng| {
            for mut row in block.slice_mut(s![rows.clone(), ..]).rows_mut() {
                for cell in row.iter_mut() {
                    *cell = if rng.gen::<f64>() < p { 0.0 } else { scale };
                }
            }
        };
        fill(&mut emb, &mut rng);
        for (attn, ff) in per_layer.iter_mut() {
            fill(attn, &mut rng);
            fill(ff, &mut rng);
        }
    }
    DropoutMasks { emb, per_layer }
}

pub(crate) struct LnCache {
    pub normalized: Array2<f64>,
    pub inv_std: Vec<f64>,
}

pub(crate) struct LayerCache {
    /// Input activations to this layer.
    pub x_in: Array2<f64>,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Attention weights per `(sequence, head)`, indexed `seq * n_heads + h`.
    pub attn: Vec<Array2<f64>>,
    /// Concatenated head outputs before the output projection.
    pub o: Array2<f64>,
    pub ln1: LnCache,
    pub x1: Array2<f64>,
    pub h_pre: Array2<f64>,
    pub h_act: Array2<f64>,
    pub ln2: LnCache,
}

pub(crate) struct ChunkCache {
    pub ids: Vec<Vec<u32>>,
    pub layers: Vec<LayerCache>,
    pub masks: Option<DropoutMasks>,
}

pub(crate) struct ChunkForward {
    /// `(m, d)` output vectors at the `[CLS]` position.
    pub z: Array2<f64>,
    pub scores: Vec<f64>,
    pub cache: ChunkCache,
}

fn layer_norm(
    x: &Array2<f64>,
    gain: &Array1<f64>,
    offset: &Array1<f64>,
) -> (Array2<f64>, LnCache) {
    let rows = x.nrows();
    let cols = x.ncols();
    let mut normalized = Array2::zeros((rows, cols));
    let mut out = Array2::zeros((rows, cols));
    let mut inv_std = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.sum() / cols as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let istd = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(istd);
        for c in 0..cols {
            let n = (row[c] - mean) * istd;
            normalized[[r, c]] = n;
            out[[r, c]] = n * gain[c] + offset[c];
        }
    }
    (out, LnCache { normalized, inv_std })
}

fn masked_softmax_rows(scores: &mut Array2<f64>, key_masked: &[bool]) {
    let (rows, cols) = (scores.nrows(), scores.ncols());
    for i in 0..rows {
        let mut max = f64::NEG_INFINITY;
        for j in 0..cols {
            if !key_masked[j] && scores[[i, j]] > max {
                max = scores[[i, j]];
            }
        }
        if max == f64::NEG_INFINITY {
            // every key masked; leave an all-zero attention row
            for j in 0..cols {
                scores[[i, j]] = 0.0;
            }
            continue;
        }
        let mut sum = 0.0;
        for j in 0..cols {
            let e = if key_masked[j] {
                0.0
            } else {
                (scores[[i, j]] - max).exp()
            };
            scores[[i, j]] = e;
            sum += e;
        }
        for j in 0..cols {
            scores[[i, j]] /= sum;
        }
    }
}

fn validate_ids(ids: &[Vec<u32>], cfg: &EncoderConfig, vocab_size: usize) -> Result<()> {
    for seq in ids {
        if seq.len() != cfg.u {
            return Err(Error::Model(format!(
                "sequence length {} does not match configured length {}",
                seq.len(),
                cfg.u
            )));
        }
        if let Some(&bad) = seq.iter().find(|&&id| id as usize >= vocab_size) {
            return Err(Error::Model(format!(
                "token id {bad} out of range for vocabulary of size {vocab_size}"
            )));
        }
    }
    Ok(())
}

/// Run the encoder forward over one chunk of sequences.
///
/// `masks` enables train-mode dropout; pass `None` for deterministic eval.
/// `check_finite` adds per-layer finiteness checks for the training path.
pub(crate) fn forward_chunk(
    ids: &[Vec<u32>],
    params: &ModelParameters,
    cfg: &EncoderConfig,
    pe: &Array2<f64>,
    masks: Option<DropoutMasks>,
    check_finite: bool,
) -> Result<ChunkForward> {
    validate_ids(ids, cfg, params.vocab_size())?;
    let m = ids.len();
    let (u, d) = (cfg.u, cfg.d);
    let n_heads = cfg.n_heads;
    let dh = cfg.head_dim();
    let inv_sqrt_dh = 1.0 / (dh as f64).sqrt();

    let pad: Vec<bool> = ids
        .iter()
        .flat_map(|seq| seq.iter().map(|&id| id == PAD_ID))
        .collect();

    // Embed, scale by sqrt(d) so token content is not drowned out by the
    // positional encoding, and add the positional encoding.
    let emb_scale = (d as f64).sqrt();
    let mut x = Array2::zeros((m * u, d));
    for (seq, seq_ids) in ids.iter().enumerate() {
        for (t, &id) in seq_ids.iter().enumerate() {
            let mut row = x.row_mut(seq * u + t);
            let emb = params.embedding.row(id as usize);
            let pe_row = pe.row(t);
            for c in 0..d {
                row[c] = emb[c] * emb_scale + pe_row[c];
            }
        }
    }
    if let Some(masks) = &masks {
        x *= &masks.emb;
    }

    let mut layer_caches = Vec::with_capacity(cfg.n_layers);
    for (layer_idx, layer) in params.layers.iter().enumerate() {
        let q = x.dot(&layer.w_query);
        let k = x.dot(&layer.w_key);
        let v = x.dot(&layer.w_value);

        let mut attn = Vec::with_capacity(m * n_heads);
        let mut o = Array2::zeros((m * u, d));
        for seq in 0..m {
            let rows = seq * u..(seq + 1) * u;
            let key_masked = &pad[seq * u..(seq + 1) * u];
            for h in 0..n_heads {
                let cols = h * dh..(h + 1) * dh;
                let q_block = q.slice(s![rows.clone(), cols.clone()]);
                let k_block = k.slice(s![rows.clone(), cols.clone()]);
                let v_block = v.slice(s![rows.clone(), cols.clone()]);
                let mut scores = q_block.dot(&k_block.t());
                scores *= inv_sqrt_dh;
                masked_softmax_rows(&mut scores, key_masked);
                let o_block = scores.dot(&v_block);
                o.slice_mut(s![rows.clone(), cols.clone()]).assign(&o_block);
                attn.push(scores);
            }
        }

        let mut attn_out = o.dot(&layer.w_output);
        if let Some(masks) = &masks {
            attn_out *= &masks.per_layer[layer_idx].0;
        }
        let r1 = &x + &attn_out;
        let (x1, ln1) = layer_norm(&r1, &layer.ln1_gain, &layer.ln1_offset);

        let mut h_pre = x1.dot(&layer.ff_w1);
        h_pre += &layer.ff_b1;
        let h_act = h_pre.mapv(|v| v.max(0.0));
        let mut ff_out = h_act.dot(&layer.ff_w2);
        ff_out += &layer.ff_b2;
        if let Some(masks) = &masks {
            ff_out *= &masks.per_layer[layer_idx].1;
        }
        let r2 = &x1 + &ff_out;
        let (x2, ln2) = layer_norm(&r2, &layer.ln2_gain, &layer.ln2_offset);

        if check_finite && !x2.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                location: format!("encoder layer {layer_idx} output"),
            });
        }

        let x_in = std::mem::replace(&mut x, x2);
        layer_caches.push(LayerCache {
            x_in,
            q,
            k,
            v,
            attn,
            o,
            ln1,
            x1,
            h_pre,
            h_act,
            ln2,
        });
    }

    let mut z = Array2::zeros((m, d));
    let mut scores = Vec::with_capacity(m);
    for seq in 0..m {
        let row = x.row(seq * u);
        z.row_mut(seq).assign(&row);
        let norm_sq: f64 = row.iter().map(|v| v * v).sum();
        let score = norm_sq.sqrt();
        if !score.is_finite() {
            return Err(Error::NonFinite {
                location: "output vector norm".into(),
            });
        }
        scores.push(score);
    }

    Ok(ChunkForward {
        z,
        scores,
        cache: ChunkCache {
            ids: ids.to_vec(),
            layers: layer_caches,
            masks,
        },
    })
}

/// Column sums as a 1-d array.
pub(crate) fn column_sums(x: &Array2<f64>) -> Array1<f64> {
    x.sum_axis(Axis(0))
}
