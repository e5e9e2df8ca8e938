//! Transcript statistics: response frequencies, consistency rates, flip
//! rates across the four correctness transitions, accuracy, expected
//! calibration error, sampled-variant aggregation, and normalized category
//! proportions.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model_client::ParsedAnswer;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Baseline,
    Misled,
}

/// One model response, parsed and scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub item_id: String,
    pub model_name: String,
    pub stage: Stage,
    /// Condition identity (see `instruction::Condition::id`).
    pub condition: String,
    /// Human-readable condition summary.
    pub condition_summary: String,
    /// Sample ordinal within (item, stage, condition).
    pub sample: u64,
    pub raw: String,
    pub parsed: Option<ParsedAnswer>,
    /// Present iff `parsed` is present; true iff the parsed token equals
    /// the item's answer key.
    pub correct: Option<bool>,
    /// Stated confidence of the chosen option, scaled to [0,1], when the
    /// run elicited per-option confidences.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    /// Logical timestamp: the deterministic append sequence within the run.
    pub timestamp: u64,
    pub seed: u64,
}

/// Ordered responses for one (item, model, condition).
#[derive(Debug, Clone)]
pub struct Transcript {
    pub item_id: String,
    pub records: Vec<RunRecord>,
}

impl Transcript {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// How responses that failed to parse enter the statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UnparseablePolicy {
    /// Count as incorrect (the conservative default).
    #[default]
    Incorrect,
    /// Drop the affected records (pairs, for transition rates).
    Excluded,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MetricConfig {
    /// Guard added to transition-rate denominators. At the default 0 an
    /// empty denominator yields `None` rather than a number.
    pub epsilon: f64,
    pub ece_bins: usize,
    pub unparseable_policy: UnparseablePolicy,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            epsilon: 0.0,
            ece_bins: 10,
            unparseable_policy: UnparseablePolicy::Incorrect,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("empty transcript")]
    EmptyTranscript,
    #[error("empty input")]
    EmptyInput,
    #[error("items missing a stage: {0:?}")]
    JoinMismatch(Vec<String>),
    #[error("sample size {k} exceeds the {n} available variants")]
    KTooLarge { k: usize, n: usize },
    #[error("zero marginal at level {level}, category {category}")]
    ZeroMarginal { level: usize, category: usize },
    #[error("bins must be at least 1")]
    NoBins,
    #[error("confidence {0} outside [0,1]")]
    BadConfidence(f64),
}

/// Number of records in the transcript whose parsed answer equals `token`.
pub fn response_frequency(transcript: &Transcript, token: &str) -> usize {
    transcript
        .records
        .iter()
        .filter(|r| r.parsed.as_ref().is_some_and(|p| p.token == token))
        .count()
}

/// Proportion of the transcript occupied by its most frequent response.
/// Unparseable responses count toward the run total but never as the mode.
pub fn consistency_rate(transcript: &Transcript) -> Result<f64, MetricError> {
    if transcript.is_empty() {
        return Err(MetricError::EmptyTranscript);
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for record in &transcript.records {
        if let Some(parsed) = &record.parsed {
            *counts.entry(parsed.token.as_str()).or_default() += 1;
        }
    }
    let max = counts.values().copied().max().unwrap_or(0);
    Ok(max as f64 / transcript.len() as f64)
}

/// Unweighted mean of per-item consistency rates.
pub fn average_consistency_rate(transcripts: &[Transcript]) -> Result<f64, MetricError> {
    if transcripts.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut sum = 0.0;
    for t in transcripts {
        sum += consistency_rate(t)?;
    }
    Ok(sum / transcripts.len() as f64)
}

/// The four correctness transitions between the baseline and misled stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct TransitionRates {
    pub true_to_true: Option<f64>,
    pub true_to_false: Option<f64>,
    pub false_to_false: Option<f64>,
    pub false_to_true: Option<f64>,
}

/// Join baseline and misled records on item id, applying the unparseable
/// policy, and return `(baseline_correct, misled_correct)` pairs.
fn join_stages(
    baseline: &[RunRecord],
    misled: &[RunRecord],
    cfg: &MetricConfig,
) -> Result<Vec<(bool, bool)>, MetricError> {
    let mut first: BTreeMap<&str, &RunRecord> = BTreeMap::new();
    for r in baseline {
        first.entry(r.item_id.as_str()).or_insert(r);
    }
    let mut second: BTreeMap<&str, &RunRecord> = BTreeMap::new();
    for r in misled {
        second.entry(r.item_id.as_str()).or_insert(r);
    }
    let mut missing: Vec<String> = Vec::new();
    for id in first.keys() {
        if !second.contains_key(id) {
            missing.push((*id).to_string());
        }
    }
    for id in second.keys() {
        if !first.contains_key(id) {
            missing.push((*id).to_string());
        }
    }
    if !missing.is_empty() {
        missing.sort();
        return Err(MetricError::JoinMismatch(missing));
    }
    let mut pairs = Vec::with_capacity(first.len());
    for (id, b) in &first {
        let m = second[id];
        match cfg.unparseable_policy {
            UnparseablePolicy::Excluded => {
                if b.parsed.is_none() || m.parsed.is_none() {
                    continue;
                }
                pairs.push((b.correct.unwrap(), m.correct.unwrap()));
            }
            UnparseablePolicy::Incorrect => {
                pairs.push((b.correct.unwrap_or(false), m.correct.unwrap_or(false)));
            }
        }
    }
    Ok(pairs)
}

/// Transition rate from correctness state `s` to `t`: the share of items
/// that started in `s` and landed in `t`. `None` when no item started in
/// `s` and the epsilon guard is zero.
pub fn misleading_rate(
    baseline: &[RunRecord],
    misled: &[RunRecord],
    s: bool,
    t: bool,
    cfg: &MetricConfig,
) -> Result<Option<f64>, MetricError> {
    let pairs = join_stages(baseline, misled, cfg)?;
    Ok(rate_from_pairs(&pairs, s, t, cfg.epsilon))
}

fn rate_from_pairs(pairs: &[(bool, bool)], s: bool, t: bool, epsilon: f64) -> Option<f64> {
    let numerator = pairs.iter().filter(|(b, m)| *b == s && *m == t).count() as f64;
    let denominator = pairs.iter().filter(|(b, _)| *b == s).count() as f64 + epsilon;
    if denominator == 0.0 {
        None
    } else {
        Some(numerator / denominator)
    }
}

/// All four transition rates from one join.
pub fn transition_rates(
    baseline: &[RunRecord],
    misled: &[RunRecord],
    cfg: &MetricConfig,
) -> Result<TransitionRates, MetricError> {
    let pairs = join_stages(baseline, misled, cfg)?;
    Ok(TransitionRates {
        true_to_true: rate_from_pairs(&pairs, true, true, cfg.epsilon),
        true_to_false: rate_from_pairs(&pairs, true, false, cfg.epsilon),
        false_to_false: rate_from_pairs(&pairs, false, false, cfg.epsilon),
        false_to_true: rate_from_pairs(&pairs, false, true, cfg.epsilon),
    })
}

/// Fraction of records answered correctly, under the unparseable policy.
pub fn accuracy(records: &[RunRecord], cfg: &MetricConfig) -> Result<f64, MetricError> {
    if records.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let scored: Vec<bool> = match cfg.unparseable_policy {
        UnparseablePolicy::Incorrect => {
            records.iter().map(|r| r.correct.unwrap_or(false)).collect()
        }
        UnparseablePolicy::Excluded => records.iter().filter_map(|r| r.correct).collect(),
    };
    if scored.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    Ok(scored.iter().filter(|c| **c).count() as f64 / scored.len() as f64)
}

/// Expected calibration error over `(confidence, correct)` pairs with
/// equal-width, right-closed bins on [0,1]; confidence exactly 0 falls into
/// the first bin.
pub fn ece(pairs: &[(f64, bool)], bins: usize) -> Result<f64, MetricError> {
    if bins < 1 {
        return Err(MetricError::NoBins);
    }
    if pairs.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut bin_n = vec![0usize; bins];
    let mut bin_conf = vec![0.0f64; bins];
    let mut bin_acc = vec![0.0f64; bins];
    for &(confidence, correct) in pairs {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(MetricError::BadConfidence(confidence));
        }
        let mut idx = (confidence * bins as f64).ceil() as usize;
        idx = idx.clamp(1, bins) - 1;
        bin_n[idx] += 1;
        bin_conf[idx] += confidence;
        bin_acc[idx] += if correct { 1.0 } else { 0.0 };
    }
    let total = pairs.len() as f64;
    let mut out = 0.0;
    for b in 0..bins {
        if bin_n[b] == 0 {
            continue;
        }
        let n = bin_n[b] as f64;
        out += (n / total) * ((bin_acc[b] / n) - (bin_conf[b] / n)).abs();
    }
    Ok(out)
}

/// Draw `k` of the item's misled variant runs (seeded, without replacement)
/// and report whether any drawn variant flipped the baseline correctness in
/// the probed direction.
pub fn sample_k_aggregate(
    baseline: &RunRecord,
    variant_runs: &[RunRecord],
    k: usize,
    base_seed: u64,
) -> Result<bool, MetricError> {
    if k > variant_runs.len() {
        return Err(MetricError::KTooLarge { k, n: variant_runs.len() });
    }
    let mut indices: Vec<usize> = (0..variant_runs.len()).collect();
    let mut rng = seed::stream(base_seed, &["sample-k", &baseline.item_id], 0);
    // Partial Fisher-Yates: the first k slots are the draw.
    for i in 0..k {
        let j = rng.random_range(i..indices.len());
        indices.swap(i, j);
    }
    let base_correct = baseline.correct.unwrap_or(false);
    let flipped = indices[..k].iter().any(|&i| {
        let variant_correct = variant_runs[i].correct.unwrap_or(false);
        variant_correct != base_correct
    });
    Ok(flipped)
}

/// Normalized share of category `category` at flip-rate level `level`:
/// the category's share of its column, divided by the level's share of the
/// grand total. `counts[level][category]`.
pub fn normalized_proportion(
    counts: &[Vec<u64>],
    level: usize,
    category: usize,
) -> Result<f64, MetricError> {
    let column_sum: u64 = counts.iter().map(|row| row[category]).sum();
    if column_sum == 0 {
        return Err(MetricError::ZeroMarginal { level, category });
    }
    let level_total: u64 = counts[level].iter().sum();
    let grand_total: u64 = counts.iter().map(|row| row.iter().sum::<u64>()).sum();
    if level_total == 0 || grand_total == 0 {
        return Err(MetricError::ZeroMarginal { level, category });
    }
    let category_share = counts[level][category] as f64 / column_sum as f64;
    let level_share = level_total as f64 / grand_total as f64;
    Ok(category_share / level_share)
}

#[cfg(test)]
pub(crate) fn record(
    item_id: &str,
    stage: Stage,
    token: Option<&str>,
    correct: Option<bool>,
) -> RunRecord {
    RunRecord {
        run_id: "r1".into(),
        item_id: item_id.into(),
        model_name: "m".into(),
        stage,
        condition: "cond".into(),
        condition_summary: "explicit:TrueAnswer/after/x1".into(),
        sample: 0,
        raw: token.unwrap_or("???").to_string(),
        parsed: token.map(|t| ParsedAnswer {
            token: t.into(),
            raw: t.into(),
            parse_path: crate::model_client::ParsePath::Exact,
        }),
        correct,
        confidence: None,
        timestamp: 0,
        seed: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn transcript(tokens: &[&str]) -> Transcript {
        let records = tokens
            .iter()
            .map(|t| record("i", Stage::Baseline, Some(t), Some(*t == "A")))
            .collect();
        Transcript { item_id: "i".into(), records }
    }

    #[test]
    fn frequency_counts() {
        let t = transcript(&["A", "A", "B"]);
        assert_eq!(response_frequency(&t, "A"), 2);
        assert_eq!(response_frequency(&t, "C"), 0);
    }

    #[test]
    fn frequency_matches_naive_loop_on_random_transcripts() {
        let tokens = ["A", "B", "C", "D"];
        let mut rng = seed::stream(91, &["freq-fixtures"], 0);
        for _ in 0..1_000 {
            let len = rng.random_range(1..=12);
            let picked: Vec<&str> =
                (0..len).map(|_| tokens[rng.random_range(0..tokens.len())]).collect();
            let t = transcript(&picked);
            for token in tokens {
                let naive = picked.iter().filter(|p| **p == token).count();
                assert_eq!(response_frequency(&t, token), naive);
            }
        }
    }

    #[test]
    fn consistency_rate_examples() {
        assert_eq!(consistency_rate(&transcript(&["A", "A", "A"])).unwrap(), 1.0);
        // max frequency 3 of 5
        assert_eq!(consistency_rate(&transcript(&["A", "A", "B", "A", "C"])).unwrap(), 0.6);
        assert_eq!(consistency_rate(&transcript(&["A", "B"])).unwrap(), 0.5);
        let empty = Transcript { item_id: "i".into(), records: vec![] };
        assert!(matches!(consistency_rate(&empty), Err(MetricError::EmptyTranscript)));
    }

    #[test]
    fn acr_examples() {
        let ts = vec![transcript(&["A", "A", "A"]), transcript(&["A", "A", "B", "A", "C"])];
        assert!((average_consistency_rate(&ts).unwrap() - 0.8).abs() < 1e-15);
        assert!(matches!(average_consistency_rate(&[]), Err(MetricError::EmptyInput)));
    }

    #[test]
    fn acr_matches_brute_force_mean() {
        let tokens = ["A", "B", "C"];
        let mut rng = seed::stream(17, &["acr-fixtures"], 0);
        for _ in 0..50 {
            let n_items = rng.random_range(1..=20);
            let ts: Vec<Transcript> = (0..n_items)
                .map(|_| {
                    let len = rng.random_range(1..=9);
                    let picked: Vec<&str> =
                        (0..len).map(|_| tokens[rng.random_range(0..tokens.len())]).collect();
                    transcript(&picked)
                })
                .collect();
            let sum: f64 = ts.iter().map(|t| consistency_rate(t).unwrap()).sum();
            let oracle = sum / ts.len() as f64;
            assert!((average_consistency_rate(&ts).unwrap() - oracle).abs() < 1e-12);
        }
    }

    fn stage_pair(flags: &[(bool, bool)]) -> (Vec<RunRecord>, Vec<RunRecord>) {
        let mut baseline = Vec::new();
        let mut misled = Vec::new();
        for (i, (b, m)) in flags.iter().enumerate() {
            let id = format!("i{i}");
            baseline.push(record(&id, Stage::Baseline, Some(if *b { "A" } else { "B" }), Some(*b)));
            misled.push(record(&id, Stage::Misled, Some(if *m { "A" } else { "B" }), Some(*m)));
        }
        (baseline, misled)
    }

    #[test]
    fn misleading_rate_headline_example() {
        // 4 items baseline-correct, 3 flip to wrong.
        let (b, m) =
            stage_pair(&[(true, false), (true, false), (true, false), (true, true)]);
        let cfg = MetricConfig::default();
        let r = misleading_rate(&b, &m, true, false, &cfg).unwrap();
        assert_eq!(r, Some(0.75));
    }

    #[test]
    fn misleading_rate_empty_denominator_is_none() {
        let (b, m) = stage_pair(&[(false, false), (false, true)]);
        let cfg = MetricConfig::default();
        assert_eq!(misleading_rate(&b, &m, true, false, &cfg).unwrap(), None);
        assert_eq!(misleading_rate(&b, &m, false, true, &cfg).unwrap(), Some(0.5));
    }

    #[test]
    fn join_mismatch_detected() {
        let (b, mut m) = stage_pair(&[(true, true), (true, false)]);
        m.pop();
        let cfg = MetricConfig::default();
        match misleading_rate(&b, &m, true, false, &cfg) {
            Err(MetricError::JoinMismatch(ids)) => assert_eq!(ids, vec!["i1".to_string()]),
            other => panic!("expected JoinMismatch, got {other:?}"),
        }
    }

    #[test]
    fn transitions_match_enumeration_oracle_and_partition() {
        let mut rng = seed::stream(5, &["mr-fixtures"], 0);
        let cfg = MetricConfig::default();
        for _ in 0..50 {
            let n = rng.random_range(1..=200);
            let flags: Vec<(bool, bool)> =
                (0..n).map(|_| (rng.random_bool(0.5), rng.random_bool(0.5))).collect();
            let (b, m) = stage_pair(&flags);
            let rates = transition_rates(&b, &m, &cfg).unwrap();

            // Brute-force enumeration over outcomes.
            let count = |s: bool, t: bool| {
                flags.iter().filter(|(fb, fm)| *fb == s && *fm == t).count() as f64
            };
            let denom_t = flags.iter().filter(|(fb, _)| *fb).count() as f64;
            let denom_f = n as f64 - denom_t;
            let expect = |num: f64, den: f64| if den == 0.0 { None } else { Some(num / den) };
            assert_eq!(rates.true_to_false, expect(count(true, false), denom_t));
            assert_eq!(rates.true_to_true, expect(count(true, true), denom_t));
            assert_eq!(rates.false_to_true, expect(count(false, true), denom_f));
            assert_eq!(rates.false_to_false, expect(count(false, false), denom_f));

            // Partition identity on nonzero denominators.
            if let (Some(tt), Some(tf)) = (rates.true_to_true, rates.true_to_false) {
                assert_eq!(tt + tf, 1.0);
            }
            if let (Some(ff), Some(ft)) = (rates.false_to_false, rates.false_to_true) {
                assert_eq!(ff + ft, 1.0);
            }
        }
    }

    #[test]
    fn unparseable_policies_for_transitions() {
        let baseline = vec![
            record("i0", Stage::Baseline, Some("A"), Some(true)),
            record("i1", Stage::Baseline, Some("A"), Some(true)),
        ];
        let misled = vec![
            record("i0", Stage::Misled, None, None),
            record("i1", Stage::Misled, Some("A"), Some(true)),
        ];
        let mut cfg = MetricConfig::default();
        // Incorrect: the unparseable misled response counts as a flip.
        assert_eq!(misleading_rate(&baseline, &misled, true, false, &cfg).unwrap(), Some(0.5));
        // Excluded: the pair drops out entirely.
        cfg.unparseable_policy = UnparseablePolicy::Excluded;
        assert_eq!(misleading_rate(&baseline, &misled, true, false, &cfg).unwrap(), Some(0.0));
    }

    #[test]
    fn accuracy_examples() {
        let cfg = MetricConfig::default();
        let all: Vec<RunRecord> =
            (0..10).map(|i| record(&format!("i{i}"), Stage::Baseline, Some("A"), Some(true))).collect();
        assert_eq!(accuracy(&all, &cfg).unwrap(), 1.0);

        let mut mixed = Vec::new();
        for i in 0..100 {
            mixed.push(record(&format!("i{i}"), Stage::Baseline, Some("A"), Some(i < 65)));
        }
        assert_eq!(accuracy(&mixed, &cfg).unwrap(), 0.65);
    }

    #[test]
    fn accuracy_excluded_policy() {
        // 100 records, 10 unparseable, 45 correct -> 45/90.
        let mut records = Vec::new();
        for i in 0..100 {
            if i < 10 {
                records.push(record(&format!("i{i}"), Stage::Baseline, None, None));
            } else {
                records.push(record(&format!("i{i}"), Stage::Baseline, Some("A"), Some(i < 55)));
            }
        }
        let cfg = MetricConfig { unparseable_policy: UnparseablePolicy::Excluded, ..Default::default() };
        assert_eq!(accuracy(&records, &cfg).unwrap(), 0.5);
    }

    #[test]
    fn ece_perfectly_calibrated_is_zero() {
        // Per bin, confidence equals the empirical accuracy exactly.
        let mut pairs = Vec::new();
        for bin in 0..10 {
            let conf = bin as f64 / 10.0 + 0.05;
            let per_bin = 20;
            let correct = (conf * per_bin as f64).round() as usize;
            for i in 0..per_bin {
                pairs.push((conf, i < correct));
            }
        }
        let e = ece(&pairs, 10).unwrap();
        assert!(e <= 1e-12, "ece {e}");
    }

    #[test]
    fn ece_overconfident_extreme() {
        let pairs: Vec<(f64, bool)> = (0..100).map(|i| (1.0, i % 2 == 0)).collect();
        assert!((ece(&pairs, 10).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ece_matches_naive_per_bin_oracle() {
        let mut rng = seed::stream(23, &["ece-fixtures"], 0);
        for _ in 0..50 {
            let n = rng.random_range(1..=500);
            let pairs: Vec<(f64, bool)> = (0..n)
                .map(|_| (rng.random_range(0.0..=1.0), rng.random_bool(0.5)))
                .collect();
            let bins = 10;
            // Naive oracle: partition, then weighted gap sum.
            let mut groups: Vec<Vec<(f64, bool)>> = vec![Vec::new(); bins];
            for &(c, ok) in &pairs {
                let mut idx = (c * bins as f64).ceil() as usize;
                idx = idx.clamp(1, bins) - 1;
                groups[idx].push((c, ok));
            }
            let mut expected = 0.0;
            for g in &groups {
                if g.is_empty() {
                    continue;
                }
                let conf: f64 = g.iter().map(|(c, _)| *c).sum::<f64>() / g.len() as f64;
                let acc: f64 =
                    g.iter().filter(|(_, ok)| *ok).count() as f64 / g.len() as f64;
                expected += (g.len() as f64 / pairs.len() as f64) * (acc - conf).abs();
            }
            assert!((ece(&pairs, bins).unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn ece_boundary_zero_goes_to_first_bin() {
        let pairs = vec![(0.0, false), (0.1, false)];
        // Both land in bin 1: mean conf 0.05, accuracy 0 -> ECE 0.05.
        assert!((ece(&pairs, 10).unwrap() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn sample_k_trivial_cases() {
        let base = record("i", Stage::Baseline, Some("A"), Some(true));
        let flip = record("i", Stage::Misled, Some("B"), Some(false));
        let stay = record("i", Stage::Misled, Some("A"), Some(true));

        // Full sample with one flipping variant always flips.
        let variants = vec![stay.clone(), flip.clone(), stay.clone()];
        assert!(sample_k_aggregate(&base, &variants, 3, 9).unwrap());

        // k=1 over non-flipping variants never flips.
        let variants = vec![stay.clone(), stay.clone()];
        assert!(!sample_k_aggregate(&base, &variants, 1, 9).unwrap());

        assert!(matches!(
            sample_k_aggregate(&base, &variants, 3, 9),
            Err(MetricError::KTooLarge { k: 3, n: 2 })
        ));
    }

    #[test]
    fn sample_k_matches_combinatorial_oracle() {
        let base = record("i", Stage::Baseline, Some("A"), Some(true));
        let flip = record("i", Stage::Misled, Some("B"), Some(false));
        let stay = record("i", Stage::Misled, Some("A"), Some(true));
        let choose = |n: u64, k: u64| -> f64 {
            if k > n {
                return 0.0;
            }
            let mut out = 1.0;
            for i in 0..k {
                out *= (n - i) as f64 / (i + 1) as f64;
            }
            out
        };
        let trials = 10_000u64;
        for v in 0..=5usize {
            for k in 1..=5usize {
                let mut variants = Vec::new();
                for i in 0..5 {
                    variants.push(if i < v { flip.clone() } else { stay.clone() });
                }
                let mut flips = 0u64;
                for s in 0..trials {
                    if sample_k_aggregate(&base, &variants, k, s).unwrap() {
                        flips += 1;
                    }
                }
                let expected = 1.0 - choose((5 - v) as u64, k as u64) / choose(5, k as u64);
                let got = flips as f64 / trials as f64;
                assert!(
                    (got - expected).abs() < 0.02,
                    "v={v} k={k}: got {got}, expected {expected}"
                );
            }
        }
    }

    #[test]
    fn metrics_invariant_to_record_order() {
        let mut rng = seed::stream(41, &["perm-fixtures"], 0);
        let cfg = MetricConfig::default();
        for _ in 0..20 {
            let n = rng.random_range(2..=60);
            let flags: Vec<(bool, bool)> =
                (0..n).map(|_| (rng.random_bool(0.5), rng.random_bool(0.5))).collect();
            let (mut b, mut m) = stage_pair(&flags);
            let before = transition_rates(&b, &m, &cfg).unwrap();
            let acc_before = accuracy(&b, &cfg).unwrap();
            // Reverse one side, rotate the other; the join realigns them.
            b.reverse();
            m.rotate_left(n / 2);
            let after = transition_rates(&b, &m, &cfg).unwrap();
            assert_eq!(before, after);
            assert_eq!(acc_before, accuracy(&b, &cfg).unwrap());
        }
    }

    #[test]
    fn acr_bounded_below_by_inverse_max_samples() {
        let tokens = ["A", "B", "C", "D"];
        let mut rng = seed::stream(42, &["acr-bounds"], 0);
        for _ in 0..50 {
            let mut max_m = 1;
            let ts: Vec<Transcript> = (0..rng.random_range(1..=10))
                .map(|_| {
                    let m = rng.random_range(1..=8);
                    max_m = max_m.max(m);
                    let picked: Vec<&str> =
                        (0..m).map(|_| tokens[rng.random_range(0..tokens.len())]).collect();
                    transcript(&picked)
                })
                .collect();
            let acr = average_consistency_rate(&ts).unwrap();
            assert!(acr >= 1.0 / max_m as f64 - 1e-12);
            assert!(acr <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn normalized_proportion_examples() {
        // Uniform matrix: every cell 1.0.
        let uniform = vec![vec![3, 3], vec![3, 3], vec![3, 3]];
        for level in 0..3 {
            for cat in 0..2 {
                assert!((normalized_proportion(&uniform, level, cat).unwrap() - 1.0).abs() < 1e-12);
            }
        }
        // Hand-evaluated: (2/2) / (2/4) = 2.
        let m = vec![vec![2, 0], vec![0, 2]];
        assert!((normalized_proportion(&m, 0, 0).unwrap() - 2.0).abs() < 1e-12);

        let zero_col = vec![vec![1, 0], vec![2, 0]];
        assert!(matches!(
            normalized_proportion(&zero_col, 0, 1),
            Err(MetricError::ZeroMarginal { .. })
        ));
    }
}
