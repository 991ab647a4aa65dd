//! Two-class training: normal target data (label 0) against a stabilization
//! class of normal messages from foreign services (label 1), sampled into
//! class-balanced batches and optimized with Adam plus decoupled weight
//! decay until the per-sample loss target or the epoch cap is reached.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{LabeledDataset, Label};
use crate::error::{Error, Result};
use crate::scorer::{batch_gradients, init_parameters, EncoderConfig, ModelParameters};
use crate::seeding;
use crate::tokenizer::{encode_ids, prepare_sequence, TokenSequence, Vocabulary};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Normal log messages from foreign services, used as the second training
/// class to keep the model from collapsing to a constant output.
#[derive(Debug, Clone)]
pub struct StabilizationSet {
    pub sequences: Vec<TokenSequence>,
    pub sources: Vec<String>,
    pub per_source_count: usize,
}

/// Optimization settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Decoupled weight decay, applied directly to weight matrices.
    pub weight_decay: f64,
    /// Stop once the epoch's mean per-sample loss drops to this value.
    pub target_avg_loss: f64,
    pub max_epochs: usize,
    /// Seed for batch sampling and dropout.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 1024,
            learning_rate: 1e-4,
            weight_decay: 5e-5,
            target_avg_loss: 0.01,
            max_epochs: 50,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight decay must be nonnegative".into()));
        }
        if self.target_avg_loss.is_nan() || self.target_avg_loss <= 0.0 {
            return Err(Error::Config("loss target must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config(
                "must train at least one epoch (max_epochs >= 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    LossTarget,
    MaxEpochs,
}

/// Outcome of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub final_avg_loss: f64,
    /// Mean per-sample loss of each completed epoch.
    pub loss_curve: Vec<f64>,
    pub stop_reason: StopReason,
}

/// Sample `per_source` normal records uniformly without replacement from each
/// external corpus and frame them to length `u`. Deterministic under `seed`.
pub fn build_stabilization_set(
    external_corpora: &[LabeledDataset],
    per_source: usize,
    u: usize,
    seed: u64,
) -> Result<StabilizationSet> {
    if per_source == 0 {
        return Err(Error::Config(
            "stabilization class requires per_source >= 1".into(),
        ));
    }
    if external_corpora.is_empty() {
        return Err(Error::Config(
            "stabilization class requires at least one external corpus".into(),
        ));
    }
    let mut sequences = Vec::with_capacity(per_source * external_corpora.len());
    let mut sources = Vec::with_capacity(external_corpora.len());
    for (ci, corpus) in external_corpora.iter().enumerate() {
        let normals: Vec<&str> = corpus
            .records
            .iter()
            .filter(|r| r.label == Label::Normal)
            .map(|r| r.content.as_str())
            .collect();
        if normals.len() < per_source {
            return Err(Error::Corpus(format!(
                "corpus '{}' has {} normal records, need {per_source} for stabilization",
                corpus.name,
                normals.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seeding::derive(seed, ci as u64));
        let mut chosen = rand::seq::index::sample(&mut rng, normals.len(), per_source).into_vec();
        chosen.sort_unstable(); // keep file order within each source
        for idx in chosen {
            sequences.push(prepare_sequence(normals[idx], u));
        }
        sources.push(corpus.name.clone());
    }
    Ok(StabilizationSet {
        sequences,
        sources,
        per_source_count: per_source,
    })
}

/// Which class a batch slot samples from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleClass {
    Target,
    Stabilization,
}

/// One sampled batch slot: a class and an index within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchSlot {
    pub class: SampleClass,
    pub index: usize,
}

/// One epoch of class-balanced batches: each slot flips a fair coin for the
/// class, then picks uniformly (with replacement) within it. The epoch holds
/// `ceil((n_target + n_stab) / batch_size)` batches.
pub struct EpochStream {
    rng: ChaCha8Rng,
    batches_left: usize,
    batch_size: usize,
    n_target: usize,
    n_stab: usize,
}

impl EpochStream {
    pub fn batches_per_epoch(&self) -> usize {
        self.batches_left
    }
}

pub fn weighted_epoch_stream(
    n_target: usize,
    n_stab: usize,
    batch_size: usize,
    seed: u64,
) -> Result<EpochStream> {
    if n_target == 0 || n_stab == 0 {
        return Err(Error::Config(
            "both training classes must be non-empty".into(),
        ));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    Ok(EpochStream {
        rng: ChaCha8Rng::seed_from_u64(seed),
        batches_left: (n_target + n_stab).div_ceil(batch_size),
        batch_size,
        n_target,
        n_stab,
    })
}

impl Iterator for EpochStream {
    type Item = Vec<BatchSlot>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.batches_left == 0 {
            return None;
        }
        self.batches_left -= 1;
        let batch = (0..self.batch_size)
            .map(|_| {
                if self.rng.gen_bool(0.5) {
                    BatchSlot {
                        class: SampleClass::Stabilization,
                        index: self.rng.gen_range(0..self.n_stab),
                    }
                } else {
                    BatchSlot {
                        class: SampleClass::Target,
                        index: self.rng.gen_range(0..self.n_target),
                    }
                }
            })
            .collect();
        Some(batch)
    }
}

fn adam_step(
    params: &mut ModelParameters,
    grads: &ModelParameters,
    m: &mut ModelParameters,
    v: &mut ModelParameters,
    t: u64,
    cfg: &TrainConfig,
) {
    let lr_t = cfg.learning_rate * (1.0 - ADAM_BETA2.powi(t as i32)).sqrt()
        / (1.0 - ADAM_BETA1.powi(t as i32));
    let decay = grads.decay_flags();
    let g_flat = grads.flat();
    let w_flat = params.flat_mut();
    let m_flat = m.flat_mut();
    let v_flat = v.flat_mut();
    for (ti, (((w_slice, g_slice), m_slice), v_slice)) in w_flat
        .into_iter()
        .zip(g_flat)
        .zip(m_flat)
        .zip(v_flat)
        .enumerate()
    {
        let apply_decay = decay[ti];
        for i in 0..w_slice.len() {
            let g = g_slice[i];
            m_slice[i] = ADAM_BETA1 * m_slice[i] + (1.0 - ADAM_BETA1) * g;
            v_slice[i] = ADAM_BETA2 * v_slice[i] + (1.0 - ADAM_BETA2) * g * g;
            w_slice[i] -= lr_t * m_slice[i] / (v_slice[i].sqrt() + ADAM_EPS);
            if apply_decay {
                w_slice[i] -= cfg.learning_rate * cfg.weight_decay * w_slice[i];
            }
        }
    }
}

/// Train the scorer. The vocabulary must have been built over the union of
/// the target and stabilization sequences. At each epoch end the mean
/// per-sample loss over that epoch decides whether to stop.
pub fn train(
    normal: &[TokenSequence],
    stab: &StabilizationSet,
    vocab: &Vocabulary,
    enc_cfg: &EncoderConfig,
    cfg: &TrainConfig,
) -> Result<(ModelParameters, TrainReport)> {
    enc_cfg.validate()?;
    cfg.validate()?;
    if normal.is_empty() {
        return Err(Error::Config("no target training sequences".into()));
    }
    if stab.sequences.is_empty() {
        return Err(Error::Config("stabilization class is empty".into()));
    }

    let target_ids: Vec<Vec<u32>> = normal.iter().map(|s| encode_ids(s, vocab)).collect();
    let stab_ids: Vec<Vec<u32>> = stab.sequences.iter().map(|s| encode_ids(s, vocab)).collect();

    let mut params = init_parameters(enc_cfg, vocab.len())?;
    let mut adam_m = params.zeros_like();
    let mut adam_v = params.zeros_like();
    let mut adam_t = 0u64;
    let mut global_step = 0u64;

    let mut loss_curve = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;
    let mut epochs_run = 0usize;

    for epoch in 1..=cfg.max_epochs {
        let stream = weighted_epoch_stream(
            target_ids.len(),
            stab_ids.len(),
            cfg.batch_size,
            seeding::derive2(cfg.seed, 1, epoch as u64),
        )?;
        let mut epoch_loss_sum = 0.0;
        let mut epoch_samples = 0usize;

        for (step, slots) in stream.enumerate() {
            let mut ids = Vec::with_capacity(slots.len());
            let mut labels = Vec::with_capacity(slots.len());
            let mut dropout_seeds = Vec::with_capacity(slots.len());
            for (slot_idx, slot) in slots.iter().enumerate() {
                match slot.class {
                    SampleClass::Target => {
                        ids.push(target_ids[slot.index].clone());
                        labels.push(0u8);
                    }
                    SampleClass::Stabilization => {
                        ids.push(stab_ids[slot.index].clone());
                        labels.push(1u8);
                    }
                }
                dropout_seeds.push(seeding::derive3(cfg.seed, 2, global_step, slot_idx as u64));
            }

            let batch = batch_gradients(&ids, &labels, &params, enc_cfg, Some(&dropout_seeds))
                .map_err(|e| Error::Training {
                    epoch,
                    step,
                    message: e.to_string(),
                })?;
            if !batch.mean_loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    step,
                    message: "non-finite batch loss".into(),
                });
            }
            adam_t += 1;
            adam_step(&mut params, &batch.gradients, &mut adam_m, &mut adam_v, adam_t, cfg);
            if !params.is_finite() {
                return Err(Error::Training {
                    epoch,
                    step,
                    message: "parameters diverged to non-finite values".into(),
                });
            }
            epoch_loss_sum += batch.mean_loss * ids.len() as f64;
            epoch_samples += ids.len();
            global_step += 1;
        }

        let avg = epoch_loss_sum / epoch_samples as f64;
        loss_curve.push(avg);
        epochs_run = epoch;
        if avg <= cfg.target_avg_loss {
            stop_reason = StopReason::LossTarget;
            break;
        }
    }

    let final_avg_loss = *loss_curve.last().expect("at least one epoch ran");
    Ok((
        params,
        TrainReport {
            epochs_run,
            final_avg_loss,
            loss_curve,
            stop_reason,
        },
    ))
}
