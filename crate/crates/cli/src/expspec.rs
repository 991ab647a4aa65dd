//! Experiment spec files: one flat `key = value` document naming the target
//! corpus, stabilization corpora, splits, methods, seeds, and every stage's
//! configuration.

use std::path::{Path, PathBuf};

use a2log_core::boundary::{AugmentationConfig, BoundaryConfig, BoundaryMethod};
use a2log_core::config::{apply_train_settings, KvReader, TrainSettings};
use a2log_core::corpus::{load_dataset, CorpusFormat};
use a2log_core::evaluator::ExperimentSpec;

use crate::{usage, CliError};

pub struct LoadedSpec {
    pub spec: ExperimentSpec,
    /// Corpus files read, for the manifest.
    pub input_paths: Vec<PathBuf>,
}

fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>, CliError> {
    raw.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| usage(format!("bad {what} entry '{s}'")))
        })
        .collect()
}

/// Parse a spec file and load the corpora it names. Paths are resolved
/// relative to the spec file's directory.
pub fn load_experiment_spec(spec_path: &Path) -> Result<LoadedSpec, CliError> {
    let text = std::fs::read_to_string(spec_path)
        .map_err(|e| usage(format!("cannot read spec {}: {e}", spec_path.display())))?;
    let base = spec_path.parent().unwrap_or(Path::new("."));
    let mut reader = KvReader::from_text(&text).map_err(|e| usage(e.to_string()))?;

    let target_raw = reader
        .take("target")
        .ok_or_else(|| usage("spec is missing 'target'"))?;
    let stab_raw = reader
        .take("stab")
        .ok_or_else(|| usage("spec is missing 'stab'"))?;

    let format: CorpusFormat = match reader.take("format").as_deref() {
        None | Some("labeled-hpc") => CorpusFormat::LabeledHpc,
        Some("plain-normal") => CorpusFormat::PlainNormal,
        Some(other) => return Err(usage(format!("unknown format '{other}'"))),
    };
    let max_lines = reader
        .take_parse::<usize>("max_lines")
        .map_err(|e| usage(e.to_string()))?;

    let splits: Vec<f64> = match reader.take("splits") {
        Some(raw) => parse_list(&raw, "split")?,
        None => vec![0.1, 0.2, 0.4, 0.6],
    };
    let methods: Vec<BoundaryMethod> = match reader.take("methods") {
        Some(raw) => parse_list(&raw, "method")?,
        None => vec![
            BoundaryMethod::A2log,
            BoundaryMethod::ThreeSigma,
            BoundaryMethod::BestOracle,
        ],
    };
    let repetitions = reader
        .take_parse::<usize>("repetitions")
        .map_err(|e| usage(e.to_string()))?
        .unwrap_or(3);
    let per_source = reader
        .take_parse::<usize>("per_source")
        .map_err(|e| usage(e.to_string()))?
        .unwrap_or(60_000);
    let master_seed = reader
        .take_parse::<u64>("master_seed")
        .map_err(|e| usage(e.to_string()))?
        .unwrap_or(1);

    let mut augmentation = AugmentationConfig::default();
    if let Some(v) = reader
        .take_parse("alpha")
        .map_err(|e| usage(e.to_string()))?
    {
        augmentation.alpha = v;
    }
    if let Some(v) = reader
        .take_parse("rounds")
        .map_err(|e| usage(e.to_string()))?
    {
        augmentation.rounds = v;
    }
    let mut boundary = BoundaryConfig::default();
    if let Some(v) = reader.take_parse("p").map_err(|e| usage(e.to_string()))? {
        boundary.p = v;
    }
    if let Some(v) = reader
        .take_parse("beta")
        .map_err(|e| usage(e.to_string()))?
    {
        boundary.beta = v;
    }

    let mut settings = TrainSettings::default();
    apply_train_settings(&mut reader, &mut settings).map_err(|e| usage(e.to_string()))?;
    reader.finish().map_err(|e| usage(e.to_string()))?;

    let mut input_paths = Vec::new();
    let target_path = base.join(target_raw.trim());
    let (target, _) = load_dataset(&target_path, format, max_lines)?;
    input_paths.push(target_path);

    let mut stabilization = Vec::new();
    for raw in stab_raw.split(',').map(|s| s.trim()).filter(|s| !s.is_empty()) {
        let path = base.join(raw);
        let (ds, _) = load_dataset(&path, format, max_lines)?;
        stabilization.push(ds);
        input_paths.push(path);
    }

    let spec = ExperimentSpec {
        target,
        stabilization,
        splits,
        methods,
        repetitions,
        per_source,
        encoder: settings.encoder,
        train: settings.train,
        augmentation,
        boundary,
        master_seed,
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    Ok(LoadedSpec { spec, input_paths })
}
