//! Test-set scoring, metrics, and the experiment harness.
//!
//! Anomalies are the positive class. Within one (split, repetition) every
//! boundary method consumes the identical score vector, so metric
//! differences stem from the threshold alone.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::{
    a2log_boundary, best_oracle_boundary, decide, score_distribution, three_sigma_boundary,
    AugmentationConfig, BoundaryConfig, BoundaryMethod, DecisionBoundary, ScoreDistribution,
};
use crate::corpus::{chronological_split, LabeledDataset, Label, SplitSpec};
use crate::error::{Error, Result};
use crate::scorer::{score_sequences, EncoderConfig, ModelParameters};
use crate::seeding;
use crate::tokenizer::{encode_ids, prepare_sequence, build_vocabulary, TokenSequence, Vocabulary};
use crate::trainer::{build_stabilization_set, train, StopReason, TrainConfig};

/// Confusion counts with anomalies as positives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Precision, recall, and F1 with their confusion counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: ConfusionCounts,
}

/// Metrics in the context of one evaluated boundary and split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: ConfusionCounts,
    pub boundary: DecisionBoundary,
    pub split: SplitSpec,
}

/// One scored and decided test record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    pub label: Label,
    pub prediction: Label,
    pub score: f64,
}

/// Count the confusion table and derive precision, recall, and F1.
/// Zero-denominator cases yield 0 by convention.
pub fn confusion_and_metrics(pairs: &[(Label, Label)]) -> Result<Metrics> {
    if pairs.is_empty() {
        return Err(Error::Evaluation("no (label, prediction) pairs".into()));
    }
    let mut counts = ConfusionCounts {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for &(label, prediction) in pairs {
        match (label, prediction) {
            (Label::Abnormal, Label::Abnormal) => counts.tp += 1,
            (Label::Normal, Label::Abnormal) => counts.fp += 1,
            (Label::Normal, Label::Normal) => counts.tn += 1,
            (Label::Abnormal, Label::Normal) => counts.fn_ += 1,
        }
    }
    let precision = if counts.tp + counts.fp > 0 {
        counts.tp as f64 / (counts.tp + counts.fp) as f64
    } else {
        0.0
    };
    let recall = if counts.tp + counts.fn_ > 0 {
        counts.tp as f64 / (counts.tp + counts.fn_) as f64
    } else {
        0.0
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(Metrics {
        precision,
        recall,
        f1,
        counts,
    })
}

/// Tokenize and score every record of a dataset in eval mode, preserving
/// order.
pub fn score_dataset(
    test: &LabeledDataset,
    params: &ModelParameters,
    vocab: &Vocabulary,
    config: &EncoderConfig,
) -> Result<Vec<(Label, f64)>> {
    let ids: Vec<Vec<u32>> = test
        .records
        .par_iter()
        .map(|r| encode_ids(&prepare_sequence(&r.content, config.u), vocab))
        .collect();
    let outputs = score_sequences(&ids, params, config)?;
    Ok(test
        .records
        .iter()
        .zip(outputs)
        .map(|(r, o)| (r.label, o.score))
        .collect())
}

/// Score a test set and apply a decision boundary to every record.
pub fn classify_dataset(
    test: &LabeledDataset,
    params: &ModelParameters,
    vocab: &Vocabulary,
    config: &EncoderConfig,
    boundary: &DecisionBoundary,
) -> Result<Vec<Classification>> {
    let scored = score_dataset(test, params, vocab, config)?;
    Ok(scored
        .into_iter()
        .map(|(label, score)| Classification {
            label,
            prediction: decide(score, boundary),
            score,
        })
        .collect())
}

/// Metrics for one boundary over an already-scored test set.
pub fn evaluate_boundary(
    scored: &[(Label, f64)],
    boundary: &DecisionBoundary,
) -> Result<Metrics> {
    let pairs: Vec<(Label, Label)> = scored
        .iter()
        .map(|&(label, score)| (label, decide(score, boundary)))
        .collect();
    confusion_and_metrics(&pairs)
}

/// A full experiment: which corpus, which splits, which boundary methods,
/// how many repetitions, and every stage's configuration.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub target: LabeledDataset,
    pub stabilization: Vec<LabeledDataset>,
    pub splits: Vec<f64>,
    pub methods: Vec<BoundaryMethod>,
    pub repetitions: usize,
    /// Stabilization samples drawn per external corpus.
    pub per_source: usize,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub augmentation: AugmentationConfig,
    pub boundary: BoundaryConfig,
    pub master_seed: u64,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.splits.is_empty() {
            return Err(Error::Config("experiment needs at least one split".into()));
        }
        for &f in &self.splits {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Config(format!("split fraction {f} out of (0,1)")));
            }
        }
        if self.methods.is_empty() {
            return Err(Error::Config("experiment needs at least one method".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if self.stabilization.is_empty() {
            return Err(Error::Config(
                "experiment needs at least one stabilization corpus".into(),
            ));
        }
        self.encoder.validate()?;
        self.train.validate()?;
        self.augmentation.validate()?;
        self.boundary.validate()?;
        Ok(())
    }
}

/// Outcome of one (split, method, repetition) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum CellOutcome {
    Ok {
        epsilon: f64,
        metrics: Metrics,
    },
    Failed {
        error: String,
    },
}

/// One row of the experiment table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentCell {
    pub split: f64,
    pub method: BoundaryMethod,
    pub repetition: usize,
    /// Seed every stage of this repetition derives from.
    pub seed: u64,
    pub outcome: CellOutcome,
    pub train_epochs: Option<usize>,
    pub stop_reason: Option<StopReason>,
    pub final_avg_loss: Option<f64>,
    /// Wall-clock seconds; excluded from the deterministic table export.
    pub train_seconds: f64,
    pub eval_seconds: f64,
}

/// Best-of-repetitions summary per (split, method), with mean and standard
/// deviation across successful repetitions for honesty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub split: f64,
    pub method: BoundaryMethod,
    pub repetitions_ok: usize,
    pub best_repetition: Option<usize>,
    pub best_f1: Option<f64>,
    pub mean_f1: Option<f64>,
    pub std_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentTable {
    pub master_seed: u64,
    pub cells: Vec<ExperimentCell>,
    pub summaries: Vec<MethodSummary>,
}

struct RepArtifacts {
    seed: u64,
    train_seconds: f64,
    train_epochs: usize,
    stop_reason: StopReason,
    final_avg_loss: f64,
    scored_test: Vec<(Label, f64)>,
    train_sequences: Vec<TokenSequence>,
    params: ModelParameters,
    vocab: Vocabulary,
    encoder: EncoderConfig,
}

fn run_repetition(spec: &ExperimentSpec, split: f64, si: usize, rep: usize) -> Result<RepArtifacts> {
    let seed = seeding::derive2(spec.master_seed, si as u64, rep as u64);
    let (train_ds, test_ds) = chronological_split(&spec.target, &SplitSpec::new(split, seed))?;

    let u = spec.encoder.u;
    let train_sequences: Vec<TokenSequence> = train_ds
        .records
        .par_iter()
        .map(|r| prepare_sequence(&r.content, u))
        .collect();
    let stab = build_stabilization_set(
        &spec.stabilization,
        spec.per_source,
        u,
        seeding::derive(seed, 1),
    )?;

    let mut all = train_sequences.clone();
    all.extend(stab.sequences.iter().cloned());
    let vocab = build_vocabulary(&all);

    let encoder = EncoderConfig {
        seed: seeding::derive(seed, 2),
        ..spec.encoder
    };
    let train_cfg = TrainConfig {
        seed: seeding::derive(seed, 3),
        ..spec.train
    };

    let t0 = Instant::now();
    let (params, report) = train(&train_sequences, &stab, &vocab, &encoder, &train_cfg)?;
    let train_seconds = t0.elapsed().as_secs_f64();

    let scored_test = score_dataset(&test_ds, &params, &vocab, &encoder)?;

    Ok(RepArtifacts {
        seed,
        train_seconds,
        train_epochs: report.epochs_run,
        stop_reason: report.stop_reason,
        final_avg_loss: report.final_avg_loss,
        scored_test,
        train_sequences,
        params,
        vocab,
        encoder,
    })
}

fn boundary_for_method(
    spec: &ExperimentSpec,
    art: &RepArtifacts,
    method: BoundaryMethod,
) -> Result<DecisionBoundary> {
    match method {
        BoundaryMethod::A2log => {
            let aug = AugmentationConfig {
                seed: seeding::derive(art.seed, 4),
                ..spec.augmentation
            };
            let d = score_distribution(
                &art.train_sequences,
                None,
                &art.params,
                &art.encoder,
                &art.vocab,
                &aug,
            )?;
            let mut b = a2log_boundary(&d, &spec.boundary)?;
            b.provenance.alpha = Some(aug.alpha);
            b.provenance.rounds = Some(aug.rounds);
            b.provenance.seed = Some(aug.seed);
            Ok(b)
        }
        BoundaryMethod::ThreeSigma => {
            let ids: Vec<Vec<u32>> = art
                .train_sequences
                .iter()
                .map(|s| encode_ids(s, &art.vocab))
                .collect();
            let outputs = score_sequences(&ids, &art.params, &art.encoder)?;
            let d = ScoreDistribution::new(outputs.into_iter().map(|o| o.score).collect())?;
            three_sigma_boundary(&d)
        }
        BoundaryMethod::BestOracle => {
            let scored: Vec<(f64, Label)> =
                art.scored_test.iter().map(|&(l, s)| (s, l)).collect();
            let (b, _) = best_oracle_boundary(&scored)?;
            Ok(b)
        }
    }
}

/// Run the full protocol: per split and repetition train once, score the
/// test set once, then evaluate every requested boundary method on those
/// shared scores. Failed stages mark their cells failed and the run
/// continues.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentTable> {
    spec.validate()?;
    let mut cells = Vec::new();

    for (si, &split) in spec.splits.iter().enumerate() {
        for rep in 0..spec.repetitions {
            match run_repetition(spec, split, si, rep) {
                Ok(art) => {
                    for &method in &spec.methods {
                        let t0 = Instant::now();
                        let outcome = boundary_for_method(spec, &art, method).and_then(|b| {
                            evaluate_boundary(&art.scored_test, &b).map(|m| (b, m))
                        });
                        let eval_seconds = t0.elapsed().as_secs_f64();
                        let outcome = match outcome {
                            Ok((b, metrics)) => CellOutcome::Ok {
                                epsilon: b.epsilon,
                                metrics,
                            },
                            Err(e) => CellOutcome::Failed {
                                error: e.to_string(),
                            },
                        };
                        cells.push(ExperimentCell {
                            split,
                            method,
                            repetition: rep,
                            seed: art.seed,
                            outcome,
                            train_epochs: Some(art.train_epochs),
                            stop_reason: Some(art.stop_reason),
                            final_avg_loss: Some(art.final_avg_loss),
                            train_seconds: art.train_seconds,
                            eval_seconds,
                        });
                    }
                }
                Err(e) => {
                    let seed = seeding::derive2(spec.master_seed, si as u64, rep as u64);
                    for &method in &spec.methods {
                        cells.push(ExperimentCell {
                            split,
                            method,
                            repetition: rep,
                            seed,
                            outcome: CellOutcome::Failed {
                                error: e.to_string(),
                            },
                            train_epochs: None,
                            stop_reason: None,
                            final_avg_loss: None,
                            train_seconds: 0.0,
                            eval_seconds: 0.0,
                        });
                    }
                }
            }
        }
    }

    let mut summaries = Vec::new();
    for &split in &spec.splits {
        for &method in &spec.methods {
            let ok_cells: Vec<(usize, f64)> = cells
                .iter()
                .filter(|c| c.split == split && c.method == method)
                .filter_map(|c| match &c.outcome {
                    CellOutcome::Ok { metrics, .. } => Some((c.repetition, metrics.f1)),
                    CellOutcome::Failed { .. } => None,
                })
                .collect();
            let n = ok_cells.len();
            let (best_repetition, best_f1) = ok_cells
                .iter()
                .fold((None, None), |(br, bf): (Option<usize>, Option<f64>), &(rep, f1)| {
                    if bf.is_none_or(|b| f1 > b) {
                        (Some(rep), Some(f1))
                    } else {
                        (br, bf)
                    }
                });
            let mean_f1 = if n > 0 {
                Some(ok_cells.iter().map(|&(_, f)| f).sum::<f64>() / n as f64)
            } else {
                None
            };
            let std_f1 = mean_f1.map(|m| {
                (ok_cells.iter().map(|&(_, f)| (f - m) * (f - m)).sum::<f64>() / n as f64).sqrt()
            });
            summaries.push(MethodSummary {
                split,
                method,
                repetitions_ok: n,
                best_repetition,
                best_f1,
                mean_f1,
                std_f1,
            });
        }
    }

    Ok(ExperimentTable {
        master_seed: spec.master_seed,
        cells,
        summaries,
    })
}

fn fmt_opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    match v {
        Some(v) => v.to_string(),
        None => "-".to_string(),
    }
}

/// Flat per-cell table for plotting and diffing. Contains no wall-clock
/// fields, so identical seeds produce byte-identical exports.
pub fn render_results_tsv(table: &ExperimentTable) -> String {
    let mut out = String::from(
        "split\tmethod\trepetition\tseed\tstatus\tepsilon\ttp\tfp\ttn\tfn\tprecision\trecall\tf1\ttrain_epochs\tstop_reason\n",
    );
    for c in &table.cells {
        let stop = c.stop_reason.map(|s| match s {
            StopReason::LossTarget => "loss-target",
            StopReason::MaxEpochs => "max-epochs",
        });
        match &c.outcome {
            CellOutcome::Ok { epsilon, metrics } => {
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\tok\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\n",
                    c.split,
                    c.method,
                    c.repetition,
                    c.seed,
                    epsilon,
                    metrics.counts.tp,
                    metrics.counts.fp,
                    metrics.counts.tn,
                    metrics.counts.fn_,
                    metrics.precision,
                    metrics.recall,
                    metrics.f1,
                    fmt_opt(&c.train_epochs),
                    stop.unwrap_or("-"),
                ));
            }
            CellOutcome::Failed { .. } => {
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\tfailed\t-\t-\t-\t-\t-\t-\t-\t-\t{}\t{}\n",
                    c.split,
                    c.method,
                    c.repetition,
                    c.seed,
                    fmt_opt(&c.train_epochs),
                    stop.unwrap_or("-"),
                ));
            }
        }
    }
    out
}

/// Best-of-repetitions summary table, one row per (split, method).
pub fn render_summary_tsv(table: &ExperimentTable) -> String {
    let mut out =
        String::from("split\tmethod\trepetitions_ok\tbest_repetition\tbest_f1\tmean_f1\tstd_f1\n");
    for s in &table.summaries {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            s.split,
            s.method,
            s.repetitions_ok,
            fmt_opt(&s.best_repetition),
            fmt_opt(&s.best_f1.map(|v| format!("{v:.6}"))),
            fmt_opt(&s.mean_f1.map(|v| format!("{v:.6}"))),
            fmt_opt(&s.std_f1.map(|v| format!("{v:.6}"))),
        ));
    }
    out
}
