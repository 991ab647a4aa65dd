//! Exact reverse-mode differentiation of the encoder forward pass.

use ndarray::{s, Array1, Array2};

use crate::error::{Error, Result};

use super::forward::{column_sums, ChunkCache, LnCache};
use super::params::{EncoderConfig, ModelParameters};

fn layer_norm_backward(
    d_out: &Array2<f64>,
    cache: &LnCache,
    gain: &Array1<f64>,
    d_gain: &mut Array1<f64>,
    d_offset: &mut Array1<f64>,
) -> Array2<f64> {
    let rows = d_out.nrows();
    let cols = d_out.ncols();
    let mut d_x = Array2::zeros((rows, cols));
    for r in 0..rows {
        let dy = d_out.row(r);
        let xhat = cache.normalized.row(r);
        let istd = cache.inv_std[r];
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for c in 0..cols {
            let dxhat = dy[c] * gain[c];
            m1 += dxhat;
            m2 += dxhat * xhat[c];
            d_gain[c] += dy[c] * xhat[c];
            d_offset[c] += dy[c];
        }
        m1 /= cols as f64;
        m2 /= cols as f64;
        let mut out = d_x.row_mut(r);
        for c in 0..cols {
            let dxhat = dy[c] * gain[c];
            out[c] = istd * (dxhat - m1 - xhat[c] * m2);
        }
    }
    d_x
}

/// Backpropagate `d_z` (gradient of the loss with respect to each sequence's
/// `[CLS]` output vector) through the cached forward pass, returning gradient
/// sums over the chunk in parameter shape.
pub(crate) fn backward_chunk(
    cache: &ChunkCache,
    params: &ModelParameters,
    cfg: &EncoderConfig,
    d_z: &Array2<f64>,
) -> Result<ModelParameters> {
    let m = cache.ids.len();
    let (u, d) = (cfg.u, cfg.d);
    let n_heads = cfg.n_heads;
    let dh = cfg.head_dim();
    let inv_sqrt_dh = 1.0 / (dh as f64).sqrt();

    let mut grads = params.zeros_like();

    // Seed: only the [CLS] row of each sequence receives output gradient.
    let mut d_x = Array2::zeros((m * u, d));
    for seq in 0..m {
        d_x.row_mut(seq * u).assign(&d_z.row(seq));
    }

    for (layer_idx, (layer, lcache)) in params
        .layers
        .iter()
        .zip(cache.layers.iter())
        .enumerate()
        .rev()
    {
        let g = &mut grads.layers[layer_idx];

        // Second sublayer: x2 = LN2(x1 + ff_out)
        let d_r2 = layer_norm_backward(
            &d_x,
            &lcache.ln2,
            &layer.ln2_gain,
            &mut g.ln2_gain,
            &mut g.ln2_offset,
        );
        let mut d_x1 = d_r2.clone();
        let mut d_ff = d_r2;
        if let Some(masks) = &cache.masks {
            d_ff *= &masks.per_layer[layer_idx].1;
        }
        g.ff_w2 += &lcache.h_act.t().dot(&d_ff);
        g.ff_b2 += &column_sums(&d_ff);
        let mut d_h = d_ff.dot(&layer.ff_w2.t());
        // relu gate
        ndarray::Zip::from(&mut d_h)
            .and(&lcache.h_pre)
            .for_each(|dh_v, &pre| {
                if pre <= 0.0 {
                    *dh_v = 0.0;
                }
            });
        g.ff_w1 += &lcache.x1.t().dot(&d_h);
        g.ff_b1 += &column_sums(&d_h);
        d_x1 += &d_h.dot(&layer.ff_w1.t());

        // First sublayer: x1 = LN1(x_in + attn_out)
        let d_r1 = layer_norm_backward(
            &d_x1,
            &lcache.ln1,
            &layer.ln1_gain,
            &mut g.ln1_gain,
            &mut g.ln1_offset,
        );
        let mut d_x_layer = d_r1.clone();
        let mut d_attn_out = d_r1;
        if let Some(masks) = &cache.masks {
            d_attn_out *= &masks.per_layer[layer_idx].0;
        }
        g.w_output += &lcache.o.t().dot(&d_attn_out);
        let d_o = d_attn_out.dot(&layer.w_output.t());

        let mut d_q = Array2::zeros((m * u, d));
        let mut d_k = Array2::zeros((m * u, d));
        let mut d_v = Array2::zeros((m * u, d));
        for seq in 0..m {
            let rows = seq * u..(seq + 1) * u;
            for h in 0..n_heads {
                let cols = h * dh..(h + 1) * dh;
                let attn = &lcache.attn[seq * n_heads + h];
                let d_o_block = d_o.slice(s![rows.clone(), cols.clone()]);
                let q_block = lcache.q.slice(s![rows.clone(), cols.clone()]);
                let k_block = lcache.k.slice(s![rows.clone(), cols.clone()]);
                let v_block = lcache.v.slice(s![rows.clone(), cols.clone()]);

                d_v.slice_mut(s![rows.clone(), cols.clone()])
                    .assign(&attn.t().dot(&d_o_block));

                // softmax backward: dS = A ⊙ (dA − rowsum(dA ⊙ A))
                let mut d_scores = d_o_block.dot(&v_block.t());
                for i in 0..u {
                    let mut t = 0.0;
                    for j in 0..u {
                        t += attn[[i, j]] * d_scores[[i, j]];
                    }
                    for j in 0..u {
                        let da = d_scores[[i, j]];
                        d_scores[[i, j]] = attn[[i, j]] * (da - t);
                    }
                }

                let mut d_q_block = d_scores.dot(&k_block);
                d_q_block *= inv_sqrt_dh;
                d_q.slice_mut(s![rows.clone(), cols.clone()]).assign(&d_q_block);
                let mut d_k_block = d_scores.t().dot(&q_block);
                d_k_block *= inv_sqrt_dh;
                d_k.slice_mut(s![rows.clone(), cols.clone()]).assign(&d_k_block);
            }
        }

        g.w_query += &lcache.x_in.t().dot(&d_q);
        g.w_key += &lcache.x_in.t().dot(&d_k);
        g.w_value += &lcache.x_in.t().dot(&d_v);
        d_x_layer += &d_q.dot(&layer.w_query.t());
        d_x_layer += &d_k.dot(&layer.w_key.t());
        d_x_layer += &d_v.dot(&layer.w_value.t());

        if !d_x_layer.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                location: format!("gradient through encoder layer {layer_idx}"),
            });
        }
        d_x = d_x_layer;
    }

    // Embedding: positional encoding is constant, dropout scales, and the
    // forward pass multiplied the embedding by sqrt(d).
    if let Some(masks) = &cache.masks {
        d_x *= &masks.emb;
    }
    let emb_scale = (d as f64).sqrt();
    for (seq, seq_ids) in cache.ids.iter().enumerate() {
        for (t, &id) in seq_ids.iter().enumerate() {
            let src = d_x.row(seq * u + t);
            let mut dst = grads.embedding.row_mut(id as usize);
            for c in 0..d {
                dst[c] += src[c] * emb_scale;
            }
        }
    }

    Ok(grads)
}
