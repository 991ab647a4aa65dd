//! Implementations of the five subcommands.

use std::fs;
use std::path::Path;

use serde_json::json;

use a2log_core::boundary::{
    a2log_boundary, best_oracle_boundary, load_boundary, save_boundary, score_distribution,
    three_sigma_boundary, AugmentationConfig, BoundaryConfig, BoundaryMethod, ScoreDistribution,
};
use a2log_core::config::{parse_train_settings, render_train_settings, TrainSettings};
use a2log_core::corpus::{
    chronological_split, generate_synthetic_corpus, load_dataset, write_dataset, CorpusFormat,
    LabeledDataset, Label, SplitSpec,
};
use a2log_core::evaluator::{
    classify_dataset, confusion_and_metrics, render_results_tsv, render_summary_tsv,
    run_experiment,
};
use a2log_core::scorer::{load_checkpoint, save_checkpoint, score_sequences};
use a2log_core::seeding;
use a2log_core::tokenizer::{build_vocabulary, encode_ids, prepare_sequence, TokenSequence};
use a2log_core::trainer::{build_stabilization_set, train as train_model, StopReason};

use crate::manifest::{sha256_file, RunManifest};
use crate::{usage, CalibrateArgs, CliError, EvaluateArgs, ExperimentArgs, SynthArgs, TrainArgs};

pub fn synth(args: SynthArgs) -> Result<(), CliError> {
    if !(0.0..1.0).contains(&args.rate) {
        return Err(usage(format!("--rate must be in [0,1), got {}", args.rate)));
    }
    if args.templates < 2 {
        return Err(usage("--templates must be at least 2"));
    }
    if args.rate > 0.0 && args.anomaly_templates == 0 {
        return Err(usage("--rate > 0 requires --anomaly-templates >= 1"));
    }
    if args.lines == 0 {
        return Err(usage("--lines must be positive"));
    }

    let ds = generate_synthetic_corpus(
        args.templates,
        args.anomaly_templates,
        args.lines,
        args.rate,
        args.seed,
    )?;
    write_dataset(&ds, &args.out)?;

    let mut manifest = RunManifest::new(
        "synth",
        Some(args.seed),
        json!({
            "templates": args.templates,
            "anomaly_templates": args.anomaly_templates,
            "lines": args.lines,
            "rate": args.rate,
            "seed": args.seed,
        }),
    );
    manifest.add_output(&args.out)?;
    manifest.write(&args.out)?;
    println!(
        "wrote {} lines ({} abnormal) to {}",
        ds.len(),
        ds.abnormal_count(),
        args.out.display()
    );
    Ok(())
}

fn load_corpus(
    path: &Path,
    format: CorpusFormat,
    max_lines: Option<usize>,
) -> Result<LabeledDataset, CliError> {
    let (ds, report) = load_dataset(path, format, max_lines)?;
    if report.skipped_malformed > 0 {
        eprintln!(
            "note: skipped {} malformed lines in {}",
            report.skipped_malformed,
            path.display()
        );
    }
    Ok(ds)
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    if !(args.split > 0.0 && args.split < 1.0) {
        return Err(usage(format!(
            "--split must be in (0,1), got {}",
            args.split
        )));
    }
    if args.per_source == 0 {
        return Err(usage("--per-source must be at least 1"));
    }

    let mut settings = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
            parse_train_settings(&text).map_err(|e| usage(e.to_string()))?
        }
        None => TrainSettings::default(),
    };
    if let Some(seed) = args.seed {
        settings.encoder.seed = seeding::derive(seed, 10);
        settings.train.seed = seeding::derive(seed, 11);
    }
    let stab_seed = seeding::derive(args.seed.unwrap_or(settings.train.seed), 12);

    let target = load_corpus(&args.data, args.format.into(), args.max_lines)?;
    let (train_ds, _test_ds) =
        chronological_split(&target, &SplitSpec::new(args.split, stab_seed))?;
    let u = settings.encoder.u;
    let train_sequences: Vec<TokenSequence> = train_ds
        .records
        .iter()
        .map(|r| prepare_sequence(&r.content, u))
        .collect();

    let mut stab_corpora = Vec::new();
    for path in &args.stab {
        stab_corpora.push(load_corpus(path, args.format.into(), args.max_lines)?);
    }
    let stab = build_stabilization_set(&stab_corpora, args.per_source, u, stab_seed)?;

    let mut all = train_sequences.clone();
    all.extend(stab.sequences.iter().cloned());
    let vocab = build_vocabulary(&all);

    let (params, report) = train_model(
        &train_sequences,
        &stab,
        &vocab,
        &settings.encoder,
        &settings.train,
    )?;

    fs::create_dir_all(&args.out)
        .map_err(|e| anyhow::anyhow!("cannot create {}: {e}", args.out.display()))?;
    let checkpoint_path = args.out.join("checkpoint.a2lg");
    let vocab_path = args.out.join("vocab.txt");
    let report_path = args.out.join("train_report.json");
    save_checkpoint(&params, &settings.encoder, &vocab, &checkpoint_path)?;
    vocab.save(&vocab_path)?;
    fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;

    let mut manifest = RunManifest::new(
        "train",
        args.seed,
        json!({
            "split": args.split,
            "per_source": args.per_source,
            "settings": render_train_settings(&settings),
            "train_records": train_sequences.len(),
            "stabilization_records": stab.sequences.len(),
            "vocabulary_size": vocab.len(),
        }),
    );
    manifest.add_input(&args.data)?;
    for path in &args.stab {
        manifest.add_input(path)?;
    }
    if let Some(cfg) = &args.config {
        manifest.add_input(cfg)?;
    }
    manifest.add_output(&checkpoint_path)?;
    manifest.add_output(&vocab_path)?;
    manifest.add_output(&report_path)?;
    manifest.write(&args.out)?;

    println!(
        "trained {} epochs, final avg loss {:.6} ({})",
        report.epochs_run,
        report.final_avg_loss,
        match report.stop_reason {
            StopReason::LossTarget => "loss-target",
            StopReason::MaxEpochs => "max-epochs",
        }
    );
    println!("checkpoint: {}", checkpoint_path.display());
    Ok(())
}

pub fn calibrate(args: CalibrateArgs) -> Result<(), CliError> {
    if !(args.p > 0.0 && args.p <= 1.0) {
        return Err(usage(format!("--p must be in (0,1], got {}", args.p)));
    }
    if args.beta.is_nan() || args.beta <= 0.0 {
        return Err(usage(format!("--beta must be positive, got {}", args.beta)));
    }
    if args.alpha == 0 {
        return Err(usage("--alpha must be at least 1"));
    }
    if args.rounds == 0 {
        return Err(usage("--rounds must be at least 1"));
    }
    let method: BoundaryMethod = args
        .method
        .parse()
        .map_err(|e: a2log_core::Error| usage(e.to_string()))?;

    let (params, enc_cfg, vocab) = load_checkpoint(&args.checkpoint)?;
    let fingerprint = sha256_file(&args.checkpoint)?;

    let train_sequences = |args: &CalibrateArgs| -> Result<Vec<TokenSequence>, CliError> {
        let data = args
            .data
            .as_ref()
            .ok_or_else(|| usage("this method requires --data"))?;
        let split = args
            .split
            .ok_or_else(|| usage("this method requires --split"))?;
        if !(split > 0.0 && split < 1.0) {
            return Err(usage(format!("--split must be in (0,1), got {split}")));
        }
        let target = load_corpus(data, args.format.into(), args.max_lines)?;
        let (train_ds, _) = chronological_split(&target, &SplitSpec::new(split, args.seed))?;
        Ok(train_ds
            .records
            .iter()
            .map(|r| prepare_sequence(&r.content, enc_cfg.u))
            .collect())
    };

    let mut boundary = match method {
        BoundaryMethod::A2log => {
            let seqs = train_sequences(&args)?;
            let aug = AugmentationConfig {
                alpha: args.alpha,
                rounds: args.rounds,
                seed: args.seed,
            };
            let d = score_distribution(&seqs, None, &params, &enc_cfg, &vocab, &aug)?;
            let mut b = a2log_boundary(
                &d,
                &BoundaryConfig {
                    p: args.p,
                    beta: args.beta,
                },
            )?;
            b.provenance.alpha = Some(aug.alpha);
            b.provenance.rounds = Some(aug.rounds);
            b.provenance.seed = Some(aug.seed);
            b
        }
        BoundaryMethod::ThreeSigma => {
            let seqs = train_sequences(&args)?;
            let ids: Vec<Vec<u32>> = seqs.iter().map(|s| encode_ids(s, &vocab)).collect();
            let outputs = score_sequences(&ids, &params, &enc_cfg)?;
            let d = ScoreDistribution::new(outputs.into_iter().map(|o| o.score).collect())?;
            three_sigma_boundary(&d)?
        }
        BoundaryMethod::BestOracle => {
            let test_path = args.test.as_ref().ok_or_else(|| {
                usage("method=best requires --test with labeled data")
            })?;
            if matches!(args.format.into(), CorpusFormat::PlainNormal) {
                return Err(usage(
                    "method=best requires labeled test data; plain-normal carries no labels",
                ));
            }
            let test = load_corpus(test_path, args.format.into(), args.max_lines)?;
            let ids: Vec<Vec<u32>> = test
                .records
                .iter()
                .map(|r| encode_ids(&prepare_sequence(&r.content, enc_cfg.u), &vocab))
                .collect();
            let outputs = score_sequences(&ids, &params, &enc_cfg)?;
            let scored: Vec<(f64, Label)> = test
                .records
                .iter()
                .zip(outputs)
                .map(|(r, o)| (o.score, r.label))
                .collect();
            let (b, f1) = best_oracle_boundary(&scored)?;
            println!("oracle F1 on provided test data: {f1:.6}");
            b
        }
    };
    boundary.provenance.checkpoint_sha256 = Some(fingerprint);

    save_boundary(&boundary, &args.out)?;

    let mut manifest = RunManifest::new(
        "calibrate",
        Some(args.seed),
        json!({
            "method": method.to_string(),
            "alpha": args.alpha,
            "rounds": args.rounds,
            "p": args.p,
            "beta": args.beta,
            "split": args.split,
        }),
    );
    manifest.add_input(&args.checkpoint)?;
    if let Some(data) = &args.data {
        manifest.add_input(data)?;
    }
    if let Some(test) = &args.test {
        manifest.add_input(test)?;
    }
    manifest.add_output(&args.out)?;
    manifest.write(&args.out)?;

    println!(
        "{} boundary epsilon = {} -> {}",
        boundary.method,
        boundary.epsilon,
        args.out.display()
    );
    Ok(())
}

pub fn evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let (params, enc_cfg, vocab) = load_checkpoint(&args.checkpoint)?;
    let fingerprint = sha256_file(&args.checkpoint)?;
    let boundary = load_boundary(&args.boundary)?;
    match &boundary.provenance.checkpoint_sha256 {
        None => {
            return Err(anyhow::anyhow!(
                "boundary record carries no checkpoint fingerprint; refusing to evaluate"
            )
            .into())
        }
        Some(fp) if fp != &fingerprint => {
            return Err(anyhow::anyhow!(
                "boundary was calibrated for checkpoint {fp}, but {} hashes to {fingerprint}; \
                 boundaries are model-specific",
                args.checkpoint.display()
            )
            .into())
        }
        Some(_) => {}
    }

    let test = match (&args.test, &args.data, args.split) {
        (Some(test_path), None, None) => {
            load_corpus(test_path, args.format.into(), args.max_lines)?
        }
        (None, Some(data_path), Some(split)) => {
            if !(split > 0.0 && split < 1.0) {
                return Err(usage(format!("--split must be in (0,1), got {split}")));
            }
            let full = load_corpus(data_path, args.format.into(), args.max_lines)?;
            let (_, test_ds) = chronological_split(&full, &SplitSpec::new(split, 0))?;
            test_ds
        }
        _ => {
            return Err(usage(
                "provide either --test FILE or both --data FILE and --split F",
            ))
        }
    };
    let classified = classify_dataset(&test, &params, &vocab, &enc_cfg, &boundary)?;
    let pairs: Vec<(Label, Label)> = classified
        .iter()
        .map(|c| (c.label, c.prediction))
        .collect();
    let metrics = confusion_and_metrics(&pairs)?;

    let doc = json!({
        "boundary": boundary,
        "checkpoint_sha256": fingerprint,
        "n_test": classified.len(),
        "counts": metrics.counts,
        "precision": metrics.precision,
        "recall": metrics.recall,
        "f1": metrics.f1,
    });
    fs::write(&args.out, serde_json::to_string_pretty(&doc)?)?;

    let mut manifest = RunManifest::new("evaluate", None, json!({ "split": args.split }));
    manifest.add_input(&args.checkpoint)?;
    manifest.add_input(&args.boundary)?;
    if let Some(p) = &args.test {
        manifest.add_input(p)?;
    }
    if let Some(p) = &args.data {
        manifest.add_input(p)?;
    }
    manifest.add_output(&args.out)?;
    manifest.write(&args.out)?;

    println!(
        "precision {:.6}  recall {:.6}  f1 {:.6}  (tp {} fp {} tn {} fn {})",
        metrics.precision,
        metrics.recall,
        metrics.f1,
        metrics.counts.tp,
        metrics.counts.fp,
        metrics.counts.tn,
        metrics.counts.fn_
    );
    Ok(())
}

pub fn experiment(args: ExperimentArgs) -> Result<(), CliError> {
    let loaded = crate::expspec::load_experiment_spec(&args.spec)?;
    let mut spec = loaded.spec;
    if let Some(seed) = args.seed {
        spec.master_seed = seed;
    }

    let table = run_experiment(&spec)?;

    fs::create_dir_all(&args.out)
        .map_err(|e| anyhow::anyhow!("cannot create {}: {e}", args.out.display()))?;
    let results_json = args.out.join("results.json");
    let results_tsv = args.out.join("results.tsv");
    let summary_tsv = args.out.join("summary.tsv");

    let doc = json!({
        "master_seed": spec.master_seed,
        "spec": {
            "target": spec.target.name,
            "stabilization": spec.stabilization.iter().map(|d| d.name.clone()).collect::<Vec<_>>(),
            "splits": spec.splits,
            "methods": spec.methods,
            "repetitions": spec.repetitions,
            "per_source": spec.per_source,
            "encoder": spec.encoder,
            "train": spec.train,
            "augmentation": spec.augmentation,
            "boundary": spec.boundary,
        },
        "cells": table.cells,
        "summaries": table.summaries,
    });
    fs::write(&results_json, serde_json::to_string_pretty(&doc)?)?;
    fs::write(&results_tsv, render_results_tsv(&table))?;
    fs::write(&summary_tsv, render_summary_tsv(&table))?;

    let mut manifest = RunManifest::new("experiment", Some(spec.master_seed), json!({}));
    manifest.add_input(&args.spec)?;
    for path in &loaded.input_paths {
        manifest.add_input(path)?;
    }
    manifest.add_output(&results_json)?;
    manifest.add_output(&results_tsv)?;
    manifest.add_output(&summary_tsv)?;
    manifest.write(&args.out)?;

    print!("{}", render_summary_tsv(&table));
    Ok(())
}
