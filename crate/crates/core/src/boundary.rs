//! Decision boundaries over anomaly scores.
//!
//! The augmentation boundary masks tokens in the training sequences, scores
//! the deviated copies, and sets the boundary at a percentile of that score
//! distribution scaled by a regulator. The 3-sigma baseline uses mean plus
//! three standard deviations of the un-augmented training scores. The best
//! oracle scans labeled test scores for the F1-optimal threshold, an upper
//! bound no deployable method can exceed.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::scorer::{score_sequences, EncoderConfig, ModelParameters};
use crate::seeding;
use crate::tokenizer::{encode_ids, TokenSequence, Vocabulary};
use crate::trainer::StabilizationSet;

/// Token-masking augmentation settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    /// Tokens to mask per sequence.
    pub alpha: usize,
    /// Augmented variants per training sequence.
    pub rounds: usize,
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            alpha: 1,
            rounds: 1,
            seed: 1,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha == 0 {
            return Err(Error::Config("alpha must be at least 1".into()));
        }
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        Ok(())
    }
}

/// Percentile-and-regulator boundary settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConfig {
    /// Percentile in (0, 1].
    pub p: f64,
    /// Regulator multiplied onto the percentile value.
    pub beta: f64,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        BoundaryConfig { p: 0.95, beta: 2.5 }
    }
}

impl BoundaryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p.is_nan() || self.p <= 0.0 || self.p > 1.0 {
            return Err(Error::Boundary(format!(
                "percentile must be in (0,1], got {}",
                self.p
            )));
        }
        if self.beta.is_nan() || self.beta <= 0.0 {
            return Err(Error::Boundary(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// Multiset of anomaly scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDistribution {
    scores: Vec<f64>,
}

impl ScoreDistribution {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Boundary("empty score distribution".into()));
        }
        if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::Boundary(format!(
                "non-finite score {bad} in distribution"
            )));
        }
        Ok(ScoreDistribution { scores })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.scores.iter().sum::<f64>() / self.len() as f64
    }

    /// Population standard deviation.
    pub fn population_std(&self) -> f64 {
        let mean = self.mean();
        let var = self
            .scores
            .iter()
            .map(|s| (s - mean) * (s - mean))
            .sum::<f64>()
            / self.len() as f64;
        var.sqrt()
    }
}

/// How a boundary was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryMethod {
    A2log,
    ThreeSigma,
    BestOracle,
}

impl fmt::Display for BoundaryMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundaryMethod::A2log => "a2log",
            BoundaryMethod::ThreeSigma => "three-sigma",
            BoundaryMethod::BestOracle => "best-oracle",
        })
    }
}

impl FromStr for BoundaryMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a2log" => Ok(BoundaryMethod::A2log),
            "three-sigma" => Ok(BoundaryMethod::ThreeSigma),
            "best-oracle" | "best" => Ok(BoundaryMethod::BestOracle),
            other => Err(Error::Boundary(format!("unknown boundary method '{other}'"))),
        }
    }
}

/// Configuration snapshot carried alongside a boundary.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BoundaryProvenance {
    pub p: Option<f64>,
    pub beta: Option<f64>,
    pub alpha: Option<usize>,
    pub rounds: Option<usize>,
    /// Size of the score distribution the boundary came from.
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub checkpoint_sha256: Option<String>,
}

/// The scalar threshold with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionBoundary {
    pub epsilon: f64,
    pub method: BoundaryMethod,
    pub provenance: BoundaryProvenance,
}

/// Result of augmenting one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub sequence: TokenSequence,
    /// Set when the sequence had no maskable position and was returned
    /// unchanged.
    pub warning_no_maskable: bool,
}

/// Replace `min(alpha, maskable)` distinct non-`[CLS]`, non-`[PAD]`
/// positions, chosen uniformly, with `[MASK]`. Deterministic under
/// `cfg.seed`.
pub fn augment_sequence(seq: &TokenSequence, cfg: &AugmentationConfig) -> Augmented {
    let maskable = seq.maskable_positions();
    if maskable.is_empty() {
        return Augmented {
            sequence: seq.clone(),
            warning_no_maskable: true,
        };
    }
    let k = cfg.alpha.min(maskable.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let chosen: Vec<usize> = rand::seq::index::sample(&mut rng, maskable.len(), k)
        .into_iter()
        .map(|i| maskable[i])
        .collect();
    Augmented {
        sequence: seq.with_masked(&chosen),
        warning_no_maskable: false,
    }
}

/// Score one augmented variant of every training sequence (per round) in
/// eval mode.
///
/// The distribution must come from the target training data only; passing
/// the stabilization set enables an explicit exclusion check that rejects
/// inputs overlapping it.
pub fn score_distribution(
    train_sequences: &[TokenSequence],
    stab: Option<&StabilizationSet>,
    params: &ModelParameters,
    enc_cfg: &EncoderConfig,
    vocab: &Vocabulary,
    aug_cfg: &AugmentationConfig,
) -> Result<ScoreDistribution> {
    aug_cfg.validate()?;
    if train_sequences.is_empty() {
        return Err(Error::Boundary(
            "cannot build a score distribution from no sequences".into(),
        ));
    }
    if let Some(stab) = stab {
        let forbidden: HashSet<&TokenSequence> = stab.sequences.iter().collect();
        if train_sequences.iter().any(|s| forbidden.contains(s)) {
            return Err(Error::Boundary(
                "stabilization sequences must be excluded from the boundary distribution".into(),
            ));
        }
    }

    let mut scores = Vec::with_capacity(train_sequences.len() * aug_cfg.rounds);
    for round in 0..aug_cfg.rounds {
        let ids: Vec<Vec<u32>> = train_sequences
            .iter()
            .enumerate()
            .map(|(i, seq)| {
                let per_seq = AugmentationConfig {
                    alpha: aug_cfg.alpha,
                    rounds: 1,
                    seed: seeding::derive2(aug_cfg.seed, round as u64, i as u64),
                };
                let augmented = augment_sequence(seq, &per_seq);
                encode_ids(&augmented.sequence, vocab)
            })
            .collect();
        let outputs = score_sequences(&ids, params, enc_cfg)?;
        scores.extend(outputs.into_iter().map(|o| o.score));
    }
    ScoreDistribution::new(scores)
}

/// Nearest-rank percentile: the k-th smallest value with `k = ceil(p * n)`.
/// The small subtraction guards against the float product landing one ulp
/// above an exact integer rank.
pub fn nearest_rank_percentile(scores: &[f64], p: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Boundary("percentile of an empty set".into()));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Boundary(format!(
            "percentile must be in (0,1], got {p}"
        )));
    }
    let n = scores.len();
    let k = ((p * n as f64) - 1e-9).ceil().max(1.0) as usize;
    let k = k.min(n);
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    Ok(sorted[k - 1])
}

/// Augmentation boundary: the nearest-rank percentile of the distribution
/// scaled by the regulator.
pub fn a2log_boundary(d: &ScoreDistribution, cfg: &BoundaryConfig) -> Result<DecisionBoundary> {
    cfg.validate()?;
    let percentile = nearest_rank_percentile(d.scores(), cfg.p)?;
    Ok(DecisionBoundary {
        epsilon: percentile * cfg.beta,
        method: BoundaryMethod::A2log,
        provenance: BoundaryProvenance {
            p: Some(cfg.p),
            beta: Some(cfg.beta),
            n: Some(d.len()),
            ..Default::default()
        },
    })
}

/// Baseline boundary: mean plus three population standard deviations of the
/// un-augmented training scores.
pub fn three_sigma_boundary(train_scores: &ScoreDistribution) -> Result<DecisionBoundary> {
    Ok(DecisionBoundary {
        epsilon: train_scores.mean() + 3.0 * train_scores.population_std(),
        method: BoundaryMethod::ThreeSigma,
        provenance: BoundaryProvenance {
            n: Some(train_scores.len()),
            ..Default::default()
        },
    })
}

/// Exact F1 comparison between two candidate thresholds via cross-multiplied
/// integer fractions.
fn f1_fraction(tp: usize, fp: usize, fn_: usize) -> (u128, u128) {
    ((2 * tp) as u128, (2 * tp + fp + fn_) as u128)
}

/// Label-aware oracle: scans below-min, midpoints of adjacent distinct
/// scores, and above-max, returning the threshold maximizing F1 under the
/// `score > epsilon` decision rule; ties break toward the largest epsilon.
pub fn best_oracle_boundary(
    test_scores: &[(f64, Label)],
) -> Result<(DecisionBoundary, f64)> {
    if test_scores.is_empty() {
        return Err(Error::Boundary("empty test set".into()));
    }
    if let Some((bad, _)) = test_scores.iter().find(|(s, _)| !s.is_finite()) {
        return Err(Error::Boundary(format!("non-finite test score {bad}")));
    }
    let total_pos = test_scores.iter().filter(|(_, l)| l.is_abnormal()).count();
    if total_pos == 0 {
        return Err(Error::Boundary(
            "best-oracle boundary needs at least one abnormal sample".into(),
        ));
    }

    let mut sorted: Vec<(f64, Label)> = test_scores.to_vec();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite scores"));

    // distinct values with per-value positive/negative counts
    let mut groups: Vec<(f64, usize, usize)> = Vec::new();
    for &(score, label) in &sorted {
        match groups.last_mut() {
            Some((v, pos, neg)) if *v == score => {
                if label.is_abnormal() {
                    *pos += 1;
                } else {
                    *neg += 1;
                }
            }
            _ => {
                let (pos, neg) = if label.is_abnormal() { (1, 0) } else { (0, 1) };
                groups.push((score, pos, neg));
            }
        }
    }

    // suffix positive/negative counts: predictions are positive strictly
    // above the threshold
    let g = groups.len();
    let mut suffix_pos = vec![0usize; g + 1];
    let mut suffix_neg = vec![0usize; g + 1];
    for i in (0..g).rev() {
        suffix_pos[i] = suffix_pos[i + 1] + groups[i].1;
        suffix_neg[i] = suffix_neg[i + 1] + groups[i].2;
    }

    // candidate thresholds: below the minimum (everything positive), between
    // adjacent distinct values, above the maximum (nothing positive)
    let mut candidates = Vec::with_capacity(g + 1);
    candidates.push((groups[0].0 - 1.0, 0usize)); // suffix index 0
    for i in 0..g - 1 {
        candidates.push(((groups[i].0 + groups[i + 1].0) / 2.0, i + 1));
    }
    candidates.push((groups[g - 1].0 + 1.0, g));

    let mut best_eps = f64::NEG_INFINITY;
    let mut best_frac = (0u128, 1u128);
    for &(eps, suffix) in &candidates {
        let tp = suffix_pos[suffix];
        let fp = suffix_neg[suffix];
        let fn_ = total_pos - tp;
        let frac = f1_fraction(tp, fp, fn_);
        let better = frac.0 * best_frac.1 > best_frac.0 * frac.1
            || (frac.0 * best_frac.1 == best_frac.0 * frac.1 && eps > best_eps);
        if better {
            best_eps = eps;
            best_frac = frac;
        }
    }

    let f1 = best_frac.0 as f64 / best_frac.1 as f64;
    Ok((
        DecisionBoundary {
            epsilon: best_eps,
            method: BoundaryMethod::BestOracle,
            provenance: BoundaryProvenance {
                n: Some(test_scores.len()),
                ..Default::default()
            },
        },
        f1,
    ))
}

/// The anomaly decision: abnormal exactly when the score strictly exceeds
/// the boundary.
pub fn decide(score: f64, b: &DecisionBoundary) -> Label {
    if score > b.epsilon {
        Label::Abnormal
    } else {
        Label::Normal
    }
}

/// Write a boundary as a small versioned text document.
pub fn save_boundary(b: &DecisionBoundary, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("a2log-boundary v1\n");
    out.push_str(&format!("method={}\n", b.method));
    out.push_str(&format!("epsilon={}\n", b.epsilon));
    let p = &b.provenance;
    if let Some(v) = p.p {
        out.push_str(&format!("p={v}\n"));
    }
    if let Some(v) = p.beta {
        out.push_str(&format!("beta={v}\n"));
    }
    if let Some(v) = p.alpha {
        out.push_str(&format!("alpha={v}\n"));
    }
    if let Some(v) = p.rounds {
        out.push_str(&format!("rounds={v}\n"));
    }
    if let Some(v) = p.n {
        out.push_str(&format!("n={v}\n"));
    }
    if let Some(v) = p.seed {
        out.push_str(&format!("seed={v}\n"));
    }
    if let Some(v) = &p.checkpoint_sha256 {
        out.push_str(&format!("checkpoint_sha256={v}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read a boundary document back.
pub fn load_boundary(path: impl AsRef<Path>) -> Result<DecisionBoundary> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Boundary("empty boundary file".into()))?;
    if header.trim() != "a2log-boundary v1" {
        return Err(Error::Boundary(format!(
            "unsupported boundary header '{header}'"
        )));
    }
    let mut method = None;
    let mut epsilon = None;
    let mut prov = BoundaryProvenance::default();
    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Boundary(format!("bad boundary line '{line}'")))?;
        let parse_f64 = || -> Result<f64> {
            value
                .parse()
                .map_err(|_| Error::Boundary(format!("bad number '{value}' for {key}")))
        };
        let parse_usize = || -> Result<usize> {
            value
                .parse()
                .map_err(|_| Error::Boundary(format!("bad integer '{value}' for {key}")))
        };
        match key {
            "method" => method = Some(value.parse::<BoundaryMethod>()?),
            "epsilon" => epsilon = Some(parse_f64()?),
            "p" => prov.p = Some(parse_f64()?),
            "beta" => prov.beta = Some(parse_f64()?),
            "alpha" => prov.alpha = Some(parse_usize()?),
            "rounds" => prov.rounds = Some(parse_usize()?),
            "n" => prov.n = Some(parse_usize()?),
            "seed" => {
                prov.seed = Some(value.parse().map_err(|_| {
                    Error::Boundary(format!("bad integer '{value}' for seed"))
                })?)
            }
            "checkpoint_sha256" => prov.checkpoint_sha256 = Some(value.to_string()),
            other => return Err(Error::Boundary(format!("unknown boundary key '{other}'"))),
        }
    }
    Ok(DecisionBoundary {
        epsilon: epsilon.ok_or_else(|| Error::Boundary("missing epsilon".into()))?,
        method: method.ok_or_else(|| Error::Boundary("missing method".into()))?,
        provenance: prov,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::init_parameters;
    use crate::tokenizer::{build_vocabulary, prepare_sequence, CLS_TOKEN, MASK_TOKEN, PAD_TOKEN};
    use proptest::prelude::*;

    fn dist(scores: &[f64]) -> ScoreDistribution {
        ScoreDistribution::new(scores.to_vec()).unwrap()
    }

    #[test]
    fn augment_masks_one_content_token() {
        let seq = prepare_sequence("time.c: Detected 3591.142 MHz.", 20);
        assert_eq!(seq.origin_length(), 7);
        let cfg = AugmentationConfig {
            alpha: 1,
            rounds: 1,
            seed: 4,
        };
        let out = augment_sequence(&seq, &cfg);
        assert!(!out.warning_no_maskable);
        let diffs: Vec<usize> = (0..20)
            .filter(|&i| seq.tokens()[i] != out.sequence.tokens()[i])
            .collect();
        assert_eq!(diffs.len(), 1);
        let pos = diffs[0];
        assert!(pos >= 1 && pos < seq.origin_length());
        assert_eq!(out.sequence.tokens()[pos].text(), MASK_TOKEN);
        assert_eq!(out.sequence.tokens()[0].text(), CLS_TOKEN);
        assert!(out.sequence.tokens()[7..].iter().all(|t| t.text() == PAD_TOKEN));
    }

    #[test]
    fn augment_clamps_alpha_to_maskable_count() {
        let seq = prepare_sequence("two words", 6);
        let cfg = AugmentationConfig {
            alpha: 5,
            rounds: 1,
            seed: 0,
        };
        let out = augment_sequence(&seq, &cfg);
        assert_eq!(out.sequence.tokens()[1].text(), MASK_TOKEN);
        assert_eq!(out.sequence.tokens()[2].text(), MASK_TOKEN);
    }

    #[test]
    fn augment_degenerate_sequence_warns() {
        let seq = prepare_sequence("", 4);
        let cfg = AugmentationConfig::default();
        let out = augment_sequence(&seq, &cfg);
        assert!(out.warning_no_maskable);
        assert_eq!(out.sequence, seq);
    }

    #[test]
    fn augment_is_deterministic() {
        let seq = prepare_sequence("alpha beta gamma delta", 10);
        let cfg = AugmentationConfig {
            alpha: 2,
            rounds: 1,
            seed: 77,
        };
        assert_eq!(augment_sequence(&seq, &cfg), augment_sequence(&seq, &cfg));
    }

    #[test]
    fn percentile_worked_example() {
        let scores: Vec<f64> = (1..=20).map(|i| i as f64).collect();
        assert_eq!(nearest_rank_percentile(&scores, 0.95).unwrap(), 19.0);
        let d = dist(&scores);
        let b = a2log_boundary(&d, &BoundaryConfig { p: 0.95, beta: 2.5 }).unwrap();
        assert!((b.epsilon - 47.5).abs() < 1e-12);
    }

    #[test]
    fn percentile_edge_cases() {
        assert_eq!(nearest_rank_percentile(&[5.0], 0.5).unwrap(), 5.0);
        let scores = [3.0, 1.0, 2.0];
        assert_eq!(nearest_rank_percentile(&scores, 1.0).unwrap(), 3.0);
        assert_eq!(nearest_rank_percentile(&scores, 0.01).unwrap(), 1.0);
        assert!(nearest_rank_percentile(&scores, 0.0).is_err());
        assert!(nearest_rank_percentile(&scores, 1.3).is_err());
        assert!(nearest_rank_percentile(&[], 0.5).is_err());
    }

    #[test]
    fn constant_distribution_boundary_is_scaled_constant() {
        let d = dist(&[0.4; 11]);
        let b = a2log_boundary(&d, &BoundaryConfig { p: 0.95, beta: 2.5 }).unwrap();
        assert!((b.epsilon - 1.0).abs() < 1e-12);
        let b = a2log_boundary(&d, &BoundaryConfig { p: 1.0, beta: 1.0 }).unwrap();
        assert!((b.epsilon - 0.4).abs() < 1e-12);
    }

    /// Independent nearest-rank oracle: the smallest distinct value v with
    /// |{x <= v}| >= ceil(p n).
    fn naive_percentile(scores: &[f64], p: f64) -> f64 {
        let n = scores.len();
        let k = ((p * n as f64) - 1e-9).ceil().max(1.0) as usize;
        let mut distinct: Vec<f64> = scores.to_vec();
        distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
        distinct.dedup();
        for v in distinct {
            let count = scores.iter().filter(|&&x| x <= v).count();
            if count >= k {
                return v;
            }
        }
        unreachable!("k <= n always reachable");
    }

    #[test]
    fn percentile_matches_naive_oracle_on_random_inputs() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..100 {
            let n = rng.gen_range(1..400);
            // duplicates included deliberately
            let scores: Vec<f64> = (0..n)
                .map(|_| (rng.gen_range(0..50) as f64) * 0.25)
                .collect();
            let p: f64 = rng.gen_range(0.01..=1.0);
            let got = nearest_rank_percentile(&scores, p).unwrap();
            let expected = naive_percentile(&scores, p);
            assert_eq!(got, expected, "n={n} p={p}");
        }
    }

    #[test]
    fn three_sigma_worked_example() {
        let d = dist(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let b = three_sigma_boundary(&d).unwrap();
        assert!((b.epsilon - (3.0 + 3.0 * 2f64.sqrt())).abs() < 1e-12);
        assert!((b.epsilon - 7.242640687119285).abs() < 1e-12);
    }

    #[test]
    fn three_sigma_degenerate_cases() {
        assert_eq!(three_sigma_boundary(&dist(&[0.5; 4])).unwrap().epsilon, 0.5);
        assert_eq!(three_sigma_boundary(&dist(&[0.0])).unwrap().epsilon, 0.0);
    }

    #[test]
    fn best_oracle_separable_scores() {
        let scores = vec![
            (0.1, Label::Normal),
            (0.2, Label::Normal),
            (0.3, Label::Normal),
            (0.5, Label::Abnormal),
            (0.6, Label::Abnormal),
        ];
        let (b, f1) = best_oracle_boundary(&scores).unwrap();
        assert_eq!(f1, 1.0);
        assert!((b.epsilon - 0.4).abs() < 1e-12);
    }

    #[test]
    fn best_oracle_interleaved_scores_cannot_be_perfect() {
        let scores = vec![
            (0.1, Label::Abnormal),
            (0.2, Label::Normal),
            (0.3, Label::Abnormal),
            (0.4, Label::Normal),
        ];
        let (_, f1) = best_oracle_boundary(&scores).unwrap();
        assert!(f1 < 1.0);
    }

    #[test]
    fn best_oracle_is_shift_invariant() {
        let base = vec![
            (0.2, Label::Normal),
            (0.9, Label::Abnormal),
            (0.5, Label::Normal),
            (1.4, Label::Abnormal),
            (0.8, Label::Normal),
        ];
        let shifted: Vec<(f64, Label)> = base.iter().map(|(s, l)| (s + 10.0, *l)).collect();
        let (b1, f1a) = best_oracle_boundary(&base).unwrap();
        let (b2, f1b) = best_oracle_boundary(&shifted).unwrap();
        assert_eq!(f1a, f1b);
        assert!((b2.epsilon - b1.epsilon - 10.0).abs() < 1e-9);
    }

    #[test]
    fn best_oracle_requires_an_abnormal_sample() {
        let scores = vec![(0.1, Label::Normal), (0.2, Label::Normal)];
        assert!(best_oracle_boundary(&scores).is_err());
    }

    #[test]
    fn decide_cases() {
        let b = DecisionBoundary {
            epsilon: 1.0,
            method: BoundaryMethod::A2log,
            provenance: Default::default(),
        };
        assert_eq!(decide(1.5, &b), Label::Abnormal);
        assert_eq!(decide(1.0, &b), Label::Normal); // boundary value is normal
        assert_eq!(decide(0.0, &b), Label::Normal);
    }

    #[test]
    fn score_distribution_counts_and_guards() {
        let u = 8;
        let contents = ["alpha beta 42", "gamma delta 7", "alpha epsilon"];
        let seqs: Vec<TokenSequence> = contents.iter().map(|c| prepare_sequence(c, u)).collect();
        let vocab = build_vocabulary(&seqs);
        let cfg = EncoderConfig {
            u,
            d: 8,
            ff_hidden: 16,
            n_layers: 1,
            n_heads: 2,
            dropout: 0.0,
            seed: 9,
        };
        let params = init_parameters(&cfg, vocab.len()).unwrap();
        let aug = AugmentationConfig::default();

        // n inputs -> n scores, finite even with untrained parameters
        let d = score_distribution(&seqs, None, &params, &cfg, &vocab, &aug).unwrap();
        assert_eq!(d.len(), seqs.len());
        assert!(d.scores().iter().all(|s| s.is_finite()));

        // rounds multiply the count
        let aug2 = AugmentationConfig {
            rounds: 3,
            ..Default::default()
        };
        let d2 = score_distribution(&seqs, None, &params, &cfg, &vocab, &aug2).unwrap();
        assert_eq!(d2.len(), 3 * seqs.len());

        // stabilization overlap rejected
        let stab = StabilizationSet {
            sequences: vec![seqs[1].clone()],
            sources: vec!["foreign".into()],
            per_source_count: 1,
        };
        assert!(
            score_distribution(&seqs, Some(&stab), &params, &cfg, &vocab, &aug).is_err()
        );

        // empty input rejected
        assert!(score_distribution(&[], None, &params, &cfg, &vocab, &aug).is_err());
    }

    #[test]
    fn boundary_record_round_trip() {
        let b = DecisionBoundary {
            epsilon: 12.345678901234567,
            method: BoundaryMethod::A2log,
            provenance: BoundaryProvenance {
                p: Some(0.95),
                beta: Some(2.5),
                alpha: Some(1),
                rounds: Some(1),
                n: Some(1840),
                seed: Some(42),
                checkpoint_sha256: Some("ab12cd".into()),
            },
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("boundary.txt");
        save_boundary(&b, &path).unwrap();
        let loaded = load_boundary(&path).unwrap();
        assert_eq!(loaded, b);

        let sparse = DecisionBoundary {
            epsilon: 0.25,
            method: BoundaryMethod::ThreeSigma,
            provenance: BoundaryProvenance {
                n: Some(10),
                ..Default::default()
            },
        };
        save_boundary(&sparse, &path).unwrap();
        assert_eq!(load_boundary(&path).unwrap(), sparse);
    }

    proptest! {
        #[test]
        fn augmentation_preserves_frame_and_masks_exactly(
            words in proptest::collection::vec("[a-z]{1,6}", 0..12),
            alpha in 1usize..5,
            seed in 0u64..1000,
            u in 4usize..16,
        ) {
            let tokens: Vec<crate::tokenizer::Token> =
                words.iter().map(crate::tokenizer::Token::new).collect();
            let seq = crate::tokenizer::frame_sequence(&tokens, u);
            let cfg = AugmentationConfig { alpha, rounds: 1, seed };
            let out = augment_sequence(&seq, &cfg);
            prop_assert_eq!(out.sequence.len(), u);
            prop_assert_eq!(out.sequence.tokens()[0].text(), CLS_TOKEN);
            prop_assert_eq!(out.sequence.origin_length(), seq.origin_length());
            let maskable = seq.maskable_positions().len();
            let diffs: Vec<usize> = (0..u)
                .filter(|&i| seq.tokens()[i] != out.sequence.tokens()[i])
                .collect();
            if maskable == 0 {
                prop_assert!(out.warning_no_maskable);
                prop_assert!(diffs.is_empty());
            } else {
                // positions already holding [MASK] can be re-chosen, so count
                // chosen positions, not text diffs, via the mask invariant
                prop_assert!(diffs.len() <= alpha.min(maskable));
                for &i in &diffs {
                    prop_assert_eq!(out.sequence.tokens()[i].text(), MASK_TOKEN);
                    prop_assert!(i >= 1 && i < seq.origin_length());
                }
            }
        }

        #[test]
        fn a2log_boundary_is_monotone_in_p_and_beta(
            scores in proptest::collection::vec(0.0f64..100.0, 1..200),
            p1 in 0.05f64..1.0,
            p2 in 0.05f64..1.0,
            beta1 in 0.1f64..5.0,
            beta2 in 0.1f64..5.0,
        ) {
            let d = ScoreDistribution::new(scores).unwrap();
            let (plo, phi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
            let (blo, bhi) = if beta1 <= beta2 { (beta1, beta2) } else { (beta2, beta1) };
            let e_lo = a2log_boundary(&d, &BoundaryConfig { p: plo, beta: blo }).unwrap().epsilon;
            let e_p = a2log_boundary(&d, &BoundaryConfig { p: phi, beta: blo }).unwrap().epsilon;
            let e_b = a2log_boundary(&d, &BoundaryConfig { p: plo, beta: bhi }).unwrap().epsilon;
            prop_assert!(e_p >= e_lo);
            prop_assert!(e_b >= e_lo);
        }

        #[test]
        fn decide_is_antitone_in_epsilon(
            score in 0.0f64..10.0,
            e1 in 0.0f64..10.0,
            delta in 0.0f64..5.0,
        ) {
            let lower = DecisionBoundary {
                epsilon: e1,
                method: BoundaryMethod::A2log,
                provenance: Default::default(),
            };
            let higher = DecisionBoundary {
                epsilon: e1 + delta,
                method: BoundaryMethod::A2log,
                provenance: Default::default(),
            };
            // raising epsilon never flips a normal decision to abnormal
            if decide(score, &lower) == Label::Normal {
                prop_assert_eq!(decide(score, &higher), Label::Normal);
            }
        }
    }
}
