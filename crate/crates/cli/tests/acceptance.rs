//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured values. The desk-scale experiment (criterion 5) runs once
//! and is shared by the criteria that inspect the trained pipeline.
//!
//! Run with `cargo test -p a2log-cli --test acceptance -- --nocapture`.

use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use a2log_core::boundary::{
    a2log_boundary, best_oracle_boundary, nearest_rank_percentile, score_distribution,
    three_sigma_boundary, AugmentationConfig, BoundaryConfig, BoundaryMethod, ScoreDistribution,
};
use a2log_core::corpus::{generate_synthetic_corpus, Label};
use a2log_core::evaluator::{run_experiment, CellOutcome, ExperimentSpec, ExperimentTable};
use a2log_core::scorer::{
    batch_gradients, hyperspherical_loss, init_parameters, load_checkpoint, save_checkpoint,
    score_sequences, EncoderConfig, ModelParameters,
};
use a2log_core::tokenizer::{
    build_vocabulary, encode_ids, prepare_sequence, tokenize_content, normalize_tokens,
    frame_sequence, TokenSequence, Vocabulary, CLS_ID, PAD_ID,
};
use a2log_core::trainer::{build_stabilization_set, train, StopReason, TrainConfig};

// ---------------------------------------------------------------------------
// shared desk-scale fixture
// ---------------------------------------------------------------------------

/// Desk-scale encoder: the paper-shaped architecture narrowed so the whole
/// protocol runs on a laptop-class CPU.
fn desk_encoder() -> EncoderConfig {
    EncoderConfig {
        u: 20,
        d: 32,
        ff_hidden: 64,
        n_layers: 2,
        n_heads: 4,
        dropout: 0.05,
        seed: 0,
    }
}

fn desk_train() -> TrainConfig {
    TrainConfig {
        batch_size: 256,
        learning_rate: 3e-3,
        weight_decay: 5e-5,
        target_avg_loss: 0.01,
        max_epochs: 50,
        seed: 0,
    }
}

struct TrainedModel {
    params: ModelParameters,
    vocab: Vocabulary,
    encoder: EncoderConfig,
    train_sequences: Vec<TokenSequence>,
}

struct Fixture {
    table: ExperimentTable,
    experiment_seconds: f64,
    model: TrainedModel,
}

static FIXTURE: OnceLock<Fixture> = OnceLock::new();

fn fixture() -> &'static Fixture {
    FIXTURE.get_or_init(|| {
        let target = generate_synthetic_corpus(50, 10, 20_000, 0.08, 1).unwrap();
        let stabilization = vec![
            generate_synthetic_corpus(400, 2, 6_000, 0.0, 31).unwrap(),
            generate_synthetic_corpus(400, 2, 6_000, 0.0, 32).unwrap(),
        ];

        let spec = ExperimentSpec {
            target: target.clone(),
            stabilization: stabilization.clone(),
            splits: vec![0.1, 0.2, 0.4, 0.6],
            methods: vec![
                BoundaryMethod::A2log,
                BoundaryMethod::ThreeSigma,
                BoundaryMethod::BestOracle,
            ],
            repetitions: 3,
            per_source: 2_500,
            encoder: desk_encoder(),
            train: desk_train(),
            augmentation: AugmentationConfig {
                alpha: 1,
                rounds: 1,
                seed: 0,
            },
            boundary: BoundaryConfig { p: 0.95, beta: 2.5 },
            master_seed: 1,
        };
        let t0 = Instant::now();
        let table = run_experiment(&spec).unwrap();
        let experiment_seconds = t0.elapsed().as_secs_f64();

        // one standalone trained model for the criteria that need direct
        // access to parameters (augmentation response, checkpoint round trip)
        let encoder = EncoderConfig {
            seed: 11,
            ..desk_encoder()
        };
        let train_cfg = TrainConfig {
            seed: 12,
            ..desk_train()
        };
        let (train_ds, _) = a2log_core::corpus::chronological_split(
            &target,
            &a2log_core::corpus::SplitSpec::new(0.1, 0),
        )
        .unwrap();
        let train_sequences: Vec<TokenSequence> = train_ds
            .records
            .iter()
            .map(|r| prepare_sequence(&r.content, encoder.u))
            .collect();
        let stab = build_stabilization_set(&stabilization, 2_500, encoder.u, 13).unwrap();
        let mut all = train_sequences.clone();
        all.extend(stab.sequences.iter().cloned());
        let vocab = build_vocabulary(&all);
        let (params, report) = train(&train_sequences, &stab, &vocab, &encoder, &train_cfg).unwrap();
        assert_eq!(
            report.stop_reason,
            StopReason::LossTarget,
            "fixture model must converge to the loss target"
        );

        Fixture {
            table,
            experiment_seconds,
            model: TrainedModel {
                params,
                vocab,
                encoder,
                train_sequences,
            },
        }
    })
}

fn best_of_reps(table: &ExperimentTable, split: f64, method: BoundaryMethod) -> f64 {
    table
        .summaries
        .iter()
        .find(|s| s.split == split && s.method == method)
        .and_then(|s| s.best_f1)
        .unwrap_or_else(|| panic!("no successful repetition for split {split} method {method}"))
}

// ---------------------------------------------------------------------------
// criteria
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_tokenizer_golden_example() {
    let start = Instant::now();
    let seq = frame_sequence(
        &normalize_tokens(tokenize_content("time.c: Detected 3591.142 MHz.")),
        20,
    );
    let elapsed = start.elapsed();
    let texts: Vec<&str> = seq
        .tokens()
        .iter()
        .take(seq.origin_length())
        .map(|t| t.text())
        .collect();
    assert_eq!(
        texts,
        ["[CLS]", "time", "c", "Detected", "[NUM]", "[NUM]", "MHz"]
    );
    assert!(
        elapsed < Duration::from_millis(1),
        "tokenization took {elapsed:?}"
    );
    println!("PASS criterion 1: golden tokenization exact in {elapsed:?}");
}

#[test]
fn criterion_2_loss_closed_forms() {
    let ln2 = std::f64::consts::LN_2;
    let normal = hyperspherical_loss(&[2.0], &[0]).unwrap();
    assert!((normal - 4.0).abs() < 1e-9, "got {normal}");
    let stab = hyperspherical_loss(&[ln2.sqrt()], &[1]).unwrap();
    assert!((stab - ln2).abs() < 1e-9, "got {stab}");
    println!(
        "PASS criterion 2: loss closed forms match within 1e-9 ({normal} vs 4, {stab} vs ln 2)"
    );
}

#[test]
fn criterion_3_gradient_check() {
    let start = Instant::now();
    let cfg = EncoderConfig {
        u: 4,
        d: 8,
        ff_hidden: 16,
        n_layers: 1,
        n_heads: 2,
        dropout: 0.0,
        seed: 97,
    };
    let vocab_size = 12;
    let params = init_parameters(&cfg, vocab_size).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for i in 0..3 {
        let content = cfg.u - 1 - (i % 2);
        let mut seq = vec![CLS_ID];
        for _ in 0..content {
            seq.push(rng.gen_range(3..vocab_size as u32));
        }
        while seq.len() < cfg.u {
            seq.push(PAD_ID);
        }
        ids.push(seq);
        labels.push((i % 2) as u8);
    }

    let loss_at = |p: &ModelParameters| -> f64 {
        let outputs = score_sequences(&ids, p, &cfg).unwrap();
        let scores: Vec<f64> = outputs.iter().map(|o| o.score).collect();
        hyperspherical_loss(&scores, &labels).unwrap()
    };

    let analytic = batch_gradients(&ids, &labels, &params, &cfg, None).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for t in 0..params.flat().len() {
        for i in 0..params.flat()[t].len() {
            let mut plus = params.clone();
            plus.flat_mut()[t][i] += h;
            let mut minus = params.clone();
            minus.flat_mut()[t][i] -= h;
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
            let bp = analytic.gradients.flat()[t][i];
            // floor keeps central-difference noise (~1e-10 absolute) from
            // dominating near-zero gradients
            let rel = (fd - bp).abs() / fd.abs().max(bp.abs()).max(1e-4);
            worst = worst.max(rel);
            assert!(rel <= 1e-4, "tensor {t} element {i}: fd={fd} bp={bp}");
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    println!(
        "PASS criterion 3: {checked} parameters, worst relative error {worst:.2e} in {elapsed:?}"
    );
}

/// Independent nearest-rank oracle: walk distinct values counting
/// multiplicities until the rank is reached.
fn naive_percentile(scores: &[f64], p: f64) -> f64 {
    let n = scores.len();
    let k = ((p * n as f64) - 1e-9).ceil().max(1.0) as usize;
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut count = 0usize;
    let mut idx = 0usize;
    loop {
        let v = sorted[idx];
        while idx < n && sorted[idx] == v {
            idx += 1;
            count += 1;
        }
        if count >= k {
            return v;
        }
    }
}

fn naive_three_sigma(scores: &[f64]) -> f64 {
    let n = scores.len() as f64;
    let mut sum = 0.0;
    for &s in scores {
        sum += s;
    }
    let mean = sum / n;
    let mut sq = 0.0;
    for &s in scores {
        sq += (s - mean) * (s - mean);
    }
    mean + 3.0 * (sq / n).sqrt()
}

/// Exhaustive oracle: every candidate threshold evaluated by recounting the
/// full confusion table.
fn naive_best_oracle(scored: &[(f64, Label)]) -> (f64, f64) {
    let mut values: Vec<f64> = scored.iter().map(|&(s, _)| s).collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values.dedup();
    let mut candidates = vec![values[0] - 1.0];
    for w in values.windows(2) {
        candidates.push((w[0] + w[1]) / 2.0);
    }
    candidates.push(values[values.len() - 1] + 1.0);

    let mut best_eps = f64::NEG_INFINITY;
    let mut best = (0u128, 1u128);
    for &eps in &candidates {
        let mut tp = 0u128;
        let mut fp = 0u128;
        let mut fn_ = 0u128;
        for &(s, label) in scored {
            let positive = s > eps;
            match (label, positive) {
                (Label::Abnormal, true) => tp += 1,
                (Label::Normal, true) => fp += 1,
                (Label::Abnormal, false) => fn_ += 1,
                (Label::Normal, false) => {}
            }
        }
        let frac = (2 * tp, 2 * tp + fp + fn_);
        let better = frac.0 * best.1 > best.0 * frac.1
            || (frac.0 * best.1 == best.0 * frac.1 && eps > best_eps);
        if better {
            best_eps = eps;
            best = frac;
        }
    }
    (best_eps, best.0 as f64 / best.1 as f64)
}

#[test]
fn criterion_4_boundary_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for case in 0..100 {
        // mostly small vectors, some at the 10^4 ceiling
        let n = if case % 10 == 0 {
            rng.gen_range(2_000..=10_000)
        } else {
            rng.gen_range(1..2_000)
        };
        // duplicate-heavy grid so ties are exercised
        let scores: Vec<f64> = (0..n)
            .map(|_| (rng.gen_range(0..500) as f64) * 0.01)
            .collect();
        let p: f64 = rng.gen_range(0.01..=1.0);

        let got = nearest_rank_percentile(&scores, p).unwrap();
        assert_eq!(got, naive_percentile(&scores, p), "percentile n={n} p={p}");

        let d = ScoreDistribution::new(scores.clone()).unwrap();
        let sigma = three_sigma_boundary(&d).unwrap().epsilon;
        assert_eq!(sigma, naive_three_sigma(&scores), "three-sigma n={n}");

        // label a random subset abnormal; retry until one exists
        let labeled: Vec<(f64, Label)> = scores
            .iter()
            .map(|&s| {
                let label = if rng.gen_bool(0.2) {
                    Label::Abnormal
                } else {
                    Label::Normal
                };
                (s, label)
            })
            .collect();
        if labeled.iter().any(|(_, l)| l.is_abnormal()) {
            let (b, f1) = best_oracle_boundary(&labeled).unwrap();
            let (naive_eps, naive_f1) = naive_best_oracle(&labeled);
            assert_eq!(b.epsilon, naive_eps, "best-oracle epsilon n={n}");
            assert_eq!(f1, naive_f1, "best-oracle f1 n={n}");
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    println!("PASS criterion 4: 100 random vectors match all three naive oracles exactly in {elapsed:?}");
}

#[test]
fn criterion_5_desk_scale_end_to_end() {
    let fx = fixture();
    assert!(
        fx.experiment_seconds < 900.0,
        "experiment took {:.0} s, budget is 15 min",
        fx.experiment_seconds
    );
    // 4 splits x 3 methods x 3 repetitions
    assert_eq!(fx.table.cells.len(), 36);
    assert_eq!(fx.table.summaries.len(), 12);
    for cell in &fx.table.cells {
        match &cell.outcome {
            CellOutcome::Ok { .. } => {}
            CellOutcome::Failed { error } => panic!(
                "cell (split {}, {}, rep {}) failed: {error}",
                cell.split, cell.method, cell.repetition
            ),
        }
        assert_eq!(
            cell.stop_reason,
            Some(StopReason::LossTarget),
            "training did not reach the loss target in cell (split {}, rep {})",
            cell.split,
            cell.repetition
        );
    }
    for &split in &[0.1, 0.2, 0.4, 0.6] {
        let a2log = best_of_reps(&fx.table, split, BoundaryMethod::A2log);
        let sigma = best_of_reps(&fx.table, split, BoundaryMethod::ThreeSigma);
        let oracle = best_of_reps(&fx.table, split, BoundaryMethod::BestOracle);
        assert!(
            a2log >= 0.90,
            "split {split}: best-of-3 F1 {a2log:.4} below 0.90"
        );
        assert!(
            oracle - a2log <= 0.05,
            "split {split}: oracle gap {:.4} exceeds 0.05",
            oracle - a2log
        );
        assert!(
            a2log >= sigma - 0.01,
            "split {split}: F1 {a2log:.4} trails 3-sigma {sigma:.4} by more than 0.01"
        );
        println!(
            "PASS criterion 5 (split {split}): a2log {a2log:.4}, 3-sigma {sigma:.4}, oracle {oracle:.4}"
        );
    }
    println!(
        "PASS criterion 5: full protocol in {:.0} s (< 900 s)",
        fx.experiment_seconds
    );
}

#[test]
fn criterion_6_augmentation_raises_mean_score() {
    let fx = fixture();
    let model = &fx.model;

    let original_ids: Vec<Vec<u32>> = model
        .train_sequences
        .iter()
        .map(|s| encode_ids(s, &model.vocab))
        .collect();
    let original_outputs =
        score_sequences(&original_ids, &model.params, &model.encoder).unwrap();
    let original_mean = original_outputs.iter().map(|o| o.score).sum::<f64>()
        / original_outputs.len() as f64;

    let aug = AugmentationConfig {
        alpha: 1,
        rounds: 1,
        seed: 99,
    };
    let augmented = score_distribution(
        &model.train_sequences,
        None,
        &model.params,
        &model.encoder,
        &model.vocab,
        &aug,
    )
    .unwrap();
    let augmented_mean = augmented.mean();

    assert!(
        augmented_mean >= original_mean,
        "augmented mean {augmented_mean} below original mean {original_mean}"
    );
    println!(
        "PASS criterion 6: mean augmented score {augmented_mean:.4} >= mean original score {original_mean:.4}"
    );
}

#[test]
fn criterion_7_experiment_command_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_a2log");

    let run = |args: &[&str]| {
        let out = Command::new(bin)
            .current_dir(dir.path())
            .args(args)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "command {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };

    run(&[
        "synth", "--templates", "8", "--anomaly-templates", "3", "--lines", "800", "--rate",
        "0.1", "--seed", "61", "--out", "target.log",
    ]);
    run(&[
        "synth", "--templates", "60", "--anomaly-templates", "2", "--lines", "900", "--rate",
        "0", "--seed", "62", "--out", "stab1.log",
    ]);
    run(&[
        "synth", "--templates", "60", "--anomaly-templates", "2", "--lines", "900", "--rate",
        "0", "--seed", "63", "--out", "stab2.log",
    ]);
    std::fs::write(
        dir.path().join("exp.cfg"),
        "target = target.log\nstab = stab1.log,stab2.log\nsplits = 0.3,0.6\n\
         methods = a2log,three-sigma,best-oracle\nrepetitions = 2\nper_source = 300\n\
         master_seed = 7\nu = 12\nd = 16\nff_hidden = 32\nn_layers = 1\nn_heads = 2\n\
         dropout = 0.05\nbatch_size = 64\nlearning_rate = 0.003\ntarget_avg_loss = 0.05\n\
         max_epochs = 15\nalpha = 1\np = 0.95\nbeta = 2.5\n",
    )
    .unwrap();

    run(&["experiment", "--spec", "exp.cfg", "--out", "run_a"]);
    run(&["experiment", "--spec", "exp.cfg", "--out", "run_b"]);

    let results_a = std::fs::read(dir.path().join("run_a/results.tsv")).unwrap();
    let results_b = std::fs::read(dir.path().join("run_b/results.tsv")).unwrap();
    assert_eq!(results_a, results_b, "results tables differ between runs");
    let summary_a = std::fs::read(dir.path().join("run_a/summary.tsv")).unwrap();
    let summary_b = std::fs::read(dir.path().join("run_b/summary.tsv")).unwrap();
    assert_eq!(summary_a, summary_b, "summary tables differ between runs");
    println!(
        "PASS criterion 7: two experiment runs with one master seed are byte-identical ({} bytes)",
        results_a.len()
    );
}

#[test]
fn criterion_8_oracle_dominates_every_cell() {
    let fx = fixture();
    let f1_of = |split: f64, rep: usize, method: BoundaryMethod| -> f64 {
        fx.table
            .cells
            .iter()
            .find(|c| c.split == split && c.repetition == rep && c.method == method)
            .map(|c| match &c.outcome {
                CellOutcome::Ok { metrics, .. } => metrics.f1,
                CellOutcome::Failed { error } => panic!("cell failed: {error}"),
            })
            .unwrap()
    };
    let mut cells = 0;
    for &split in &[0.1, 0.2, 0.4, 0.6] {
        for rep in 0..3 {
            let oracle = f1_of(split, rep, BoundaryMethod::BestOracle);
            let a2log = f1_of(split, rep, BoundaryMethod::A2log);
            let sigma = f1_of(split, rep, BoundaryMethod::ThreeSigma);
            assert!(
                oracle >= a2log.max(sigma),
                "split {split} rep {rep}: oracle {oracle} below max({a2log}, {sigma})"
            );
            cells += 1;
        }
    }
    println!("PASS criterion 8: best-oracle F1 dominates in all {cells} cells");
}

#[test]
fn criterion_9_checkpoint_round_trip_bit_exact() {
    let fx = fixture();
    let model = &fx.model;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.a2lg");
    save_checkpoint(&model.params, &model.encoder, &model.vocab, &path).unwrap();
    let (loaded_params, loaded_cfg, loaded_vocab) = load_checkpoint(&path).unwrap();
    assert_eq!(loaded_vocab, model.vocab);

    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let vocab_size = model.vocab.len() as u32;
    let ids: Vec<Vec<u32>> = (0..1000)
        .map(|_| {
            let content = rng.gen_range(1..model.encoder.u);
            let mut seq = vec![CLS_ID];
            for _ in 0..content {
                seq.push(rng.gen_range(0..vocab_size));
            }
            while seq.len() < model.encoder.u {
                seq.push(PAD_ID);
            }
            seq
        })
        .collect();

    let before = score_sequences(&ids, &model.params, &model.encoder).unwrap();
    let after = score_sequences(&ids, &loaded_params, &loaded_cfg).unwrap();
    for (i, (a, b)) in before.iter().zip(&after).enumerate() {
        assert!(
            a.score == b.score && a.z == b.z,
            "sequence {i}: scores differ after reload"
        );
    }
    println!("PASS criterion 9: 1000 random inputs score bit-exactly after checkpoint reload");
}

#[test]
fn boundary_helpers_share_the_fixture_model() {
    // sanity on the shared fixture: the calibrated a2log boundary separates
    // the training tail from heavily-masked content on the standalone model
    let fx = fixture();
    let model = &fx.model;
    let aug = AugmentationConfig {
        alpha: 1,
        rounds: 1,
        seed: 5,
    };
    let d = score_distribution(
        &model.train_sequences,
        None,
        &model.params,
        &model.encoder,
        &model.vocab,
        &aug,
    )
    .unwrap();
    let b = a2log_boundary(&d, &BoundaryConfig { p: 0.95, beta: 2.5 }).unwrap();
    assert!(b.epsilon.is_finite() && b.epsilon > 0.0);
}
