//! Loading, generating, and splitting labeled log corpora.
//!
//! The on-disk formats are line oriented. The labeled-HPC format carries one
//! record per line as `<label> <content...>` where the label field `-` marks
//! a normal line and anything else marks an alert. The plain-normal format is
//! bare content, one message per line, with every record labeled normal.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

/// Binary record label; anomalies are the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Normal,
    Abnormal,
}

impl Label {
    pub fn as_bit(self) -> u8 {
        match self {
            Label::Normal => 0,
            Label::Abnormal => 1,
        }
    }

    pub fn is_abnormal(self) -> bool {
        self == Label::Abnormal
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_bit())
    }
}

/// One raw log line with its label and position in the source file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    /// Ordinal position in the source file, 0-based. Strictly increasing
    /// within a corpus; gaps mark skipped malformed lines.
    pub index: usize,
    /// Free-text message body after the label field.
    pub content: String,
    pub label: Label,
    /// Corpus identifier the record came from.
    pub source: String,
}

/// An ordered collection of records preserving original file order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub name: String,
    pub records: Vec<LogRecord>,
}

impl LabeledDataset {
    pub fn new(name: impl Into<String>, records: Vec<LogRecord>) -> Self {
        Self {
            name: name.into(),
            records,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn normal_count(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.label == Label::Normal)
            .count()
    }

    pub fn abnormal_count(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.label == Label::Abnormal)
            .count()
    }
}

/// Chronological split request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Fraction of normal records (by file order) that form the train set.
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64) -> Self {
        Self {
            train_fraction,
            seed,
        }
    }
}

/// On-disk corpus formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorpusFormat {
    /// `<label> <content...>`, label `-` = normal, anything else = alert.
    LabeledHpc,
    /// Bare content per line; every record labeled normal.
    PlainNormal,
}

/// Per-load bookkeeping: how many lines were read and skipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LoadReport {
    pub lines_read: usize,
    pub skipped_malformed: usize,
}

/// Parse one labeled-HPC line into `(label, content)`.
///
/// The first whitespace-delimited field is the label (`-` = normal); the
/// remainder of the line, trimmed, is the content.
pub fn parse_labeled_log_line(line: &str) -> Result<(Label, String)> {
    let trimmed = line.trim();
    if trimmed.is_empty() {
        return Err(Error::MalformedLine {
            line_no: 0,
            reason: "empty line".into(),
        });
    }
    let (first, rest) = trimmed
        .split_once(char::is_whitespace)
        .ok_or_else(|| Error::MalformedLine {
            line_no: 0,
            reason: "no content after label field".into(),
        })?;
    let content = rest.trim();
    if content.is_empty() {
        return Err(Error::MalformedLine {
            line_no: 0,
            reason: "empty content".into(),
        });
    }
    let label = if first == "-" {
        Label::Normal
    } else {
        Label::Abnormal
    };
    Ok((label, content.to_string()))
}

/// Load a corpus from a line-oriented text file.
///
/// Malformed lines are skipped and counted in the [`LoadReport`], not fatal.
/// `max_lines` caps how many lines are read from the head of the file.
pub fn load_dataset(
    path: impl AsRef<Path>,
    format: CorpusFormat,
    max_lines: Option<usize>,
) -> Result<(LabeledDataset, LoadReport)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".to_string());

    let mut records = Vec::new();
    let mut report = LoadReport::default();
    for (line_no, line) in reader.lines().enumerate() {
        if let Some(cap) = max_lines {
            if report.lines_read >= cap {
                break;
            }
        }
        let line = line.map_err(|e| Error::io(path, e))?;
        report.lines_read += 1;
        let parsed = match format {
            CorpusFormat::LabeledHpc => parse_labeled_log_line(&line),
            CorpusFormat::PlainNormal => {
                let content = line.trim();
                if content.is_empty() {
                    Err(Error::MalformedLine {
                        line_no,
                        reason: "empty content".into(),
                    })
                } else {
                    Ok((Label::Normal, content.to_string()))
                }
            }
        };
        match parsed {
            Ok((label, content)) => records.push(LogRecord {
                index: line_no,
                content,
                label,
                source: name.clone(),
            }),
            Err(_) => report.skipped_malformed += 1,
        }
    }
    Ok((LabeledDataset::new(name, records), report))
}

/// Write a dataset in labeled-HPC format. Abnormal records get the label
/// field `ALERT`. Byte-deterministic for a given dataset.
pub fn write_dataset(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for rec in &ds.records {
        let label = match rec.label {
            Label::Normal => "-",
            Label::Abnormal => "ALERT",
        };
        writeln!(out, "{} {}", label, rec.content).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Number of training records selected by a fraction over `n_normal` normal
/// records: the floor of the product, with a small guard against the float
/// product landing one ulp below an exact integer.
pub fn train_count(n_normal: usize, fraction: f64) -> usize {
    ((fraction * n_normal as f64) + 1e-9).floor() as usize
}

/// Split a dataset chronologically: the first `floor(fraction * #normal)`
/// normal records (by file order) form the train set; every other record,
/// including anomalies occurring before the cutoff, goes to test in file
/// order.
pub fn chronological_split(
    ds: &LabeledDataset,
    spec: &SplitSpec,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must be in (0,1), got {}",
            spec.train_fraction
        )));
    }
    let n_normal = ds.normal_count();
    if n_normal == 0 {
        return Err(Error::Corpus(format!(
            "dataset '{}' has no normal records to train on",
            ds.name
        )));
    }
    let n_train = train_count(n_normal, spec.train_fraction);
    if n_train == 0 {
        return Err(Error::EmptySplit {
            fraction: spec.train_fraction,
        });
    }

    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::with_capacity(ds.len() - n_train);
    let mut taken = 0usize;
    for rec in &ds.records {
        if taken < n_train && rec.label == Label::Normal {
            train.push(rec.clone());
            taken += 1;
        } else {
            test.push(rec.clone());
        }
    }
    Ok((
        LabeledDataset::new(format!("{}-train", ds.name), train),
        LabeledDataset::new(format!("{}-test", ds.name), test),
    ))
}

/// One slot of a synthetic template: a fixed word or a variable filled per
/// line with a random decimal or hexadecimal value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TemplatePart {
    Word(String),
    Num,
    Hex,
}

/// A synthetic log template: fixed words interleaved with variable slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub parts: Vec<TemplatePart>,
}

impl Template {
    fn static_words(&self) -> impl Iterator<Item = &str> {
        self.parts.iter().filter_map(|p| match p {
            TemplatePart::Word(w) => Some(w.as_str()),
            _ => None,
        })
    }

    fn render(&self, rng: &mut ChaCha8Rng) -> String {
        let mut fields = Vec::with_capacity(self.parts.len());
        for part in &self.parts {
            match part {
                TemplatePart::Word(w) => fields.push(w.clone()),
                TemplatePart::Num => fields.push(rng.gen_range(0u32..100_000).to_string()),
                TemplatePart::Hex => fields.push(format!("0x{:08x}", rng.gen::<u32>())),
            }
        }
        fields.join(" ")
    }
}

/// Generate a corpus from explicit template sets. Errors if any static word
/// is shared between the normal and anomaly templates, since overlapping
/// template text would blur the label boundary the corpus is meant to carry.
pub fn generate_from_templates(
    normal_templates: &[Template],
    anomaly_templates: &[Template],
    n_lines: usize,
    anomaly_rate: f64,
    seed: u64,
    name: impl Into<String>,
) -> Result<LabeledDataset> {
    if normal_templates.is_empty() {
        return Err(Error::Corpus("need at least one normal template".into()));
    }
    if !(0.0..1.0).contains(&anomaly_rate) {
        return Err(Error::Config(format!(
            "anomaly rate must be in [0,1), got {anomaly_rate}"
        )));
    }
    if anomaly_rate > 0.0 && anomaly_templates.is_empty() {
        return Err(Error::Corpus(
            "anomaly rate > 0 requires anomaly templates".into(),
        ));
    }
    let normal_words: HashSet<&str> = normal_templates
        .iter()
        .flat_map(|t| t.static_words())
        .collect();
    for t in anomaly_templates {
        for w in t.static_words() {
            if normal_words.contains(w) {
                return Err(Error::Corpus(format!(
                    "anomaly template word '{w}' overlaps with normal template text"
                )));
            }
        }
    }

    let name = name.into();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n_lines);
    for index in 0..n_lines {
        let abnormal = anomaly_rate > 0.0 && rng.gen::<f64>() < anomaly_rate;
        let (label, template) = if abnormal {
            let t = &anomaly_templates[rng.gen_range(0..anomaly_templates.len())];
            (Label::Abnormal, t)
        } else {
            let t = &normal_templates[rng.gen_range(0..normal_templates.len())];
            (Label::Normal, t)
        };
        records.push(LogRecord {
            index,
            content: template.render(&mut rng),
            label,
            source: name.clone(),
        });
    }
    Ok(LabeledDataset::new(name, records))
}

/// Generate a labeled synthetic corpus: normal lines from `n_templates`
/// fixed templates with randomized numeric/hex slots, abnormal lines from
/// `n_anomaly_templates` templates whose static words are disjoint from the
/// normal ones. Deterministic under `seed`.
pub fn generate_synthetic_corpus(
    n_templates: usize,
    n_anomaly_templates: usize,
    n_lines: usize,
    anomaly_rate: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if n_templates < 2 {
        return Err(Error::Config(format!(
            "need at least 2 normal templates, got {n_templates}"
        )));
    }
    if anomaly_rate > 0.0 && n_anomaly_templates == 0 {
        return Err(Error::Config(
            "anomaly rate > 0 requires at least one anomaly template".into(),
        ));
    }

    let mut word_rng = ChaCha8Rng::seed_from_u64(seeding::derive(seed, 0));
    let words_per_template = 6usize;
    let needed = (n_templates + n_anomaly_templates) * words_per_template;
    let mut pool = Vec::with_capacity(needed);
    let mut seen = HashSet::new();
    while pool.len() < needed {
        let len = word_rng.gen_range(5..=9);
        let word: String = (0..len)
            .map(|_| (b'a' + word_rng.gen_range(0..26u8)) as char)
            .collect();
        if seen.insert(word.clone()) {
            pool.push(word);
        }
    }

    let mut template_rng = ChaCha8Rng::seed_from_u64(seeding::derive(seed, 1));
    let mut next_word = 0usize;
    let build = |rng: &mut ChaCha8Rng, pool: &[String], next: &mut usize| {
        let n_words = rng.gen_range(4..=words_per_template);
        let mut parts: Vec<TemplatePart> = (0..n_words)
            .map(|_| {
                let w = pool[*next].clone();
                *next += 1;
                TemplatePart::Word(w)
            })
            .collect();
        let n_slots = rng.gen_range(1..=2);
        for _ in 0..n_slots {
            let slot = if rng.gen_bool(0.7) {
                TemplatePart::Num
            } else {
                TemplatePart::Hex
            };
            let pos = rng.gen_range(0..=parts.len());
            parts.insert(pos, slot);
        }
        Template { parts }
    };
    let normal_templates: Vec<Template> = (0..n_templates)
        .map(|_| build(&mut template_rng, &pool, &mut next_word))
        .collect();
    let anomaly_templates: Vec<Template> = (0..n_anomaly_templates)
        .map(|_| build(&mut template_rng, &pool, &mut next_word))
        .collect();

    generate_from_templates(
        &normal_templates,
        &anomaly_templates,
        n_lines,
        anomaly_rate,
        seeding::derive(seed, 2),
        format!("synth-{seed}"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(index: usize, label: Label, content: &str) -> LogRecord {
        LogRecord {
            index,
            content: content.to_string(),
            label,
            source: "test".into(),
        }
    }

    #[test]
    fn parse_normal_line() {
        let (label, content) = parse_labeled_log_line("- 1117838570 node7 kernel: info msg").unwrap();
        assert_eq!(label, Label::Normal);
        assert_eq!(content, "1117838570 node7 kernel: info msg");
    }

    #[test]
    fn parse_alert_line() {
        let (label, content) =
            parse_labeled_log_line("KERNDTLB 1117838573 node2 kernel: data TLB error").unwrap();
        assert_eq!(label, Label::Abnormal);
        assert_eq!(content, "1117838573 node2 kernel: data TLB error");
    }

    #[test]
    fn parse_bare_label_is_malformed() {
        assert!(parse_labeled_log_line("-").is_err());
        assert!(parse_labeled_log_line("-   ").is_err());
    }

    #[test]
    fn load_preserves_order() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "- first message").unwrap();
        writeln!(f, "ALERT second message").unwrap();
        writeln!(f, "- third message").unwrap();
        f.flush().unwrap();
        let (ds, report) = load_dataset(f.path(), CorpusFormat::LabeledHpc, None).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(report.skipped_malformed, 0);
        assert_eq!(ds.records[0].content, "first message");
        assert_eq!(ds.records[1].label, Label::Abnormal);
        assert_eq!(ds.records[2].index, 2);
    }

    #[test]
    fn load_honors_max_lines() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for i in 0..5 {
            writeln!(f, "- message {i}").unwrap();
        }
        f.flush().unwrap();
        let (ds, report) = load_dataset(f.path(), CorpusFormat::LabeledHpc, Some(2)).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(report.lines_read, 2);
        assert_eq!(ds.records[1].content, "message 1");
    }

    #[test]
    fn load_counts_malformed_lines() {
        // Build a 100-line file with 7 malformed lines at known positions,
        // counting the bad lines independently as we write them.
        let mut f = tempfile::NamedTempFile::new().unwrap();
        let bad_positions: HashSet<usize> = [3, 17, 29, 44, 61, 78, 92].into_iter().collect();
        let mut expected_bad = 0usize;
        for i in 0..100 {
            if bad_positions.contains(&i) {
                writeln!(f, "-").unwrap();
                expected_bad += 1;
            } else {
                writeln!(f, "- message {i}").unwrap();
            }
        }
        f.flush().unwrap();
        let (ds, report) = load_dataset(f.path(), CorpusFormat::LabeledHpc, None).unwrap();
        assert_eq!(expected_bad, 7);
        assert_eq!(report.skipped_malformed, 7);
        assert_eq!(ds.len(), 93);
        // indices keep their file positions, so gaps mark the skips
        assert!(ds.records.iter().all(|r| !bad_positions.contains(&r.index)));
    }

    #[test]
    fn plain_normal_forces_label_zero() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "anything at all").unwrap();
        writeln!(f, "   ").unwrap();
        writeln!(f, "even ALERT looking lines").unwrap();
        f.flush().unwrap();
        let (ds, report) = load_dataset(f.path(), CorpusFormat::PlainNormal, None).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(report.skipped_malformed, 1);
        assert!(ds.records.iter().all(|r| r.label == Label::Normal));
    }

    #[test]
    fn split_takes_first_normals_and_sends_rest_to_test() {
        // 10 normals interleaved with 2 anomalies; fraction 0.2 trains on the
        // first 2 normals and tests on everything else.
        let mut records = Vec::new();
        for i in 0..12 {
            let label = if i == 1 || i == 6 {
                Label::Abnormal
            } else {
                Label::Normal
            };
            records.push(record(i, label, &format!("msg {i}")));
        }
        let ds = LabeledDataset::new("mix", records);
        let (train, test) = chronological_split(&ds, &SplitSpec::new(0.2, 0)).unwrap();
        assert_eq!(train.len(), 2);
        assert_eq!(train.records[0].index, 0);
        assert_eq!(train.records[1].index, 2);
        assert!(train.records.iter().all(|r| r.label == Label::Normal));
        assert_eq!(test.len(), 10);
        assert_eq!(test.abnormal_count(), 2);
        assert_eq!(train.len() + test.len(), ds.len());
    }

    #[test]
    fn train_count_matches_large_corpus_arithmetic() {
        assert_eq!(train_count(4_399_503, 0.6), 2_639_701);
        assert_eq!(train_count(10, 0.2), 2);
        assert_eq!(train_count(10, 0.7), 7);
    }

    #[test]
    fn split_rejects_all_abnormal_dataset() {
        let ds = LabeledDataset::new(
            "bad",
            vec![record(0, Label::Abnormal, "x y"), record(1, Label::Abnormal, "z w")],
        );
        assert!(chronological_split(&ds, &SplitSpec::new(0.5, 0)).is_err());
    }

    #[test]
    fn split_rejects_empty_training_selection() {
        let ds = LabeledDataset::new("tiny", vec![record(0, Label::Normal, "a b")]);
        let err = chronological_split(&ds, &SplitSpec::new(0.5, 0)).unwrap_err();
        assert!(matches!(err, Error::EmptySplit { .. }));
    }

    #[test]
    fn synthetic_corpus_hits_expected_anomaly_rate() {
        let ds = generate_synthetic_corpus(50, 10, 20_000, 0.08, 1).unwrap();
        assert_eq!(ds.len(), 20_000);
        let abnormal = ds.abnormal_count();
        // binomial expectation 1600, sigma ~38; allow 4 sigma
        assert!(
            (abnormal as i64 - 1600).abs() < 160,
            "abnormal count {abnormal} far from expectation 1600"
        );
    }

    #[test]
    fn synthetic_corpus_zero_rate_is_all_normal() {
        let ds = generate_synthetic_corpus(5, 2, 500, 0.0, 3).unwrap();
        assert_eq!(ds.abnormal_count(), 0);
    }

    #[test]
    fn synthetic_corpus_is_deterministic() {
        let a = generate_synthetic_corpus(8, 3, 400, 0.1, 42).unwrap();
        let b = generate_synthetic_corpus(8, 3, 400, 0.1, 42).unwrap();
        assert_eq!(a, b);

        let dir = tempfile::tempdir().unwrap();
        let pa = dir.path().join("a.log");
        let pb = dir.path().join("b.log");
        write_dataset(&a, &pa).unwrap();
        write_dataset(&b, &pb).unwrap();
        assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
    }

    #[test]
    fn overlapping_templates_are_rejected() {
        let normal = vec![Template {
            parts: vec![
                TemplatePart::Word("alpha".into()),
                TemplatePart::Word("beta".into()),
                TemplatePart::Num,
            ],
        }];
        let anomaly = vec![Template {
            parts: vec![TemplatePart::Word("beta".into()), TemplatePart::Hex],
        }];
        assert!(generate_from_templates(&normal, &anomaly, 10, 0.5, 0, "x").is_err());
    }

    #[test]
    fn write_then_load_round_trips() {
        let ds = generate_synthetic_corpus(5, 2, 200, 0.15, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.log");
        write_dataset(&ds, &path).unwrap();
        let (loaded, report) = load_dataset(&path, CorpusFormat::LabeledHpc, None).unwrap();
        assert_eq!(report.skipped_malformed, 0);
        assert_eq!(loaded.len(), ds.len());
        for (a, b) in loaded.records.iter().zip(&ds.records) {
            assert_eq!(a.label, b.label);
            assert_eq!(a.content, b.content);
            assert_eq!(a.index, b.index);
        }
    }

    proptest! {
        #[test]
        fn split_is_a_partition(
            labels in proptest::collection::vec(0..2u8, 1..60),
            fraction in 0.05f64..0.95,
        ) {
            let records: Vec<LogRecord> = labels
                .iter()
                .enumerate()
                .map(|(i, &l)| record(i, if l == 0 { Label::Normal } else { Label::Abnormal }, "m x"))
                .collect();
            let ds = LabeledDataset::new("p", records);
            let n_normal = ds.normal_count();
            prop_assume!(n_normal > 0 && train_count(n_normal, fraction) > 0);

            let (train, test) = chronological_split(&ds, &SplitSpec::new(fraction, 0)).unwrap();
            prop_assert_eq!(train.len() + test.len(), ds.len());
            prop_assert_eq!(train.abnormal_count(), 0);

            // concatenating in index order reproduces the original sequence
            let mut merged: Vec<&LogRecord> =
                train.records.iter().chain(test.records.iter()).collect();
            merged.sort_by_key(|r| r.index);
            for (orig, got) in ds.records.iter().zip(merged) {
                prop_assert_eq!(orig, got);
            }
        }

        #[test]
        fn split_is_monotone_in_fraction(
            labels in proptest::collection::vec(0..2u8, 4..60),
            f1 in 0.1f64..0.5,
            delta in 0.05f64..0.45,
        ) {
            let records: Vec<LogRecord> = labels
                .iter()
                .enumerate()
                .map(|(i, &l)| record(i, if l == 0 { Label::Normal } else { Label::Abnormal }, "m x"))
                .collect();
            let ds = LabeledDataset::new("m", records);
            let f2 = f1 + delta;
            let n_normal = ds.normal_count();
            prop_assume!(n_normal > 0 && train_count(n_normal, f1) > 0);

            let (t1, _) = chronological_split(&ds, &SplitSpec::new(f1, 0)).unwrap();
            let (t2, _) = chronological_split(&ds, &SplitSpec::new(f2, 0)).unwrap();
            prop_assert!(t1.len() <= t2.len());
            for (a, b) in t1.records.iter().zip(t2.records.iter()) {
                prop_assert_eq!(a, b);
            }
        }
    }
}
