//! Benchmark construction: the per-item flip matrix over many models,
//! difficulty stratification by flip count, the benchmark manifest, and
//! fine-tune dataset emission.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Item, ItemCollection, TaskType};
use crate::instruction::{
    select_target_option, Condition, InstructionKind, TemplateKey, COMBINE_FIVE, COMBINE_TEN,
};
use crate::metrics::Stage;
use crate::model_client::Message;
use crate::pipeline::RunStore;
use crate::seed;

/// Per-(item, model) flip outcomes under the headline explicit condition.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MisledMatrix {
    pub models: Vec<String>,
    /// item id -> one flag per model, true when that model's answer flipped
    /// in the probed direction.
    pub rows: BTreeMap<String, Vec<bool>>,
}

#[derive(Debug, thiserror::Error)]
pub enum BuilderError {
    #[error("unknown item {0:?}")]
    UnknownItem(String),
    #[error("model {model:?} lacks a {stage:?} record for item {item:?}")]
    IncompleteRun { model: String, item: String, stage: Stage },
    #[error("fine-tune pool has {have} usable items, need {need}")]
    PoolTooSmall { have: usize, need: usize },
    #[error("fine-tune item {0:?} overlaps the benchmark")]
    OverlapDetected(String),
    #[error("item {item:?} has no stored guidance to insert")]
    NoGuidance { item: String },
}

impl MisledMatrix {
    /// Assemble the matrix from one store: each run id is one model's
    /// two-stage evaluation under `condition`. Every cell must be backed by
    /// a (baseline, misled) record pair.
    pub fn from_store(
        store: &RunStore,
        run_ids: &[String],
        condition: &str,
    ) -> Result<Self, BuilderError> {
        let mut matrix = MisledMatrix::default();
        for run_id in run_ids {
            let baseline = store.baseline_records(run_id);
            let misled = store.misled_records(run_id, condition);
            let model = baseline
                .first()
                .map(|r| r.model_name.clone())
                .unwrap_or_else(|| run_id.clone());
            let mut misled_by_item: BTreeMap<&str, &crate::metrics::RunRecord> = BTreeMap::new();
            for r in &misled {
                misled_by_item.insert(r.item_id.as_str(), r);
            }
            let column = matrix.models.len();
            matrix.models.push(model.clone());
            for b in baseline {
                let m = misled_by_item.get(b.item_id.as_str()).ok_or_else(|| {
                    BuilderError::IncompleteRun {
                        model: model.clone(),
                        item: b.item_id.clone(),
                        stage: Stage::Misled,
                    }
                })?;
                let flipped = b.correct.unwrap_or(false) != m.correct.unwrap_or(false);
                let row = matrix
                    .rows
                    .entry(b.item_id.clone())
                    .or_insert_with(|| vec![false; column]);
                row.resize(column, false);
                row.push(flipped);
            }
            for row in matrix.rows.values_mut() {
                row.resize(column + 1, false);
            }
        }
        Ok(matrix)
    }

    pub fn insert_row(&mut self, item_id: &str, flips: Vec<bool>) {
        self.rows.insert(item_id.to_string(), flips);
    }

    pub fn model_count(&self) -> usize {
        self.models.len()
    }
}

/// Number of models an item misled.
pub fn count_misled(matrix: &MisledMatrix, item_id: &str) -> Result<usize, BuilderError> {
    matrix
        .rows
        .get(item_id)
        .map(|row| row.iter().filter(|f| **f).count())
        .ok_or_else(|| BuilderError::UnknownItem(item_id.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StratumLevel {
    Low,
    Medium,
    High,
    FinetunePool,
    Unused,
}

impl StratumLevel {
    pub const ALL: [StratumLevel; 5] = [
        StratumLevel::Low,
        StratumLevel::Medium,
        StratumLevel::High,
        StratumLevel::FinetunePool,
        StratumLevel::Unused,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StratumLevel::Low => "low",
            StratumLevel::Medium => "medium",
            StratumLevel::High => "high",
            StratumLevel::FinetunePool => "finetune_pool",
            StratumLevel::Unused => "unused",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stratum {
    pub level: StratumLevel,
    pub item_ids: Vec<String>,
}

/// How flip counts map to difficulty strata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StratifyMode {
    /// Exact counts: 6 is low, 9 medium, all models high; 7/8/10/11 feed
    /// the fine-tune pool; everything else is unused.
    #[default]
    Exact,
    /// Threshold bands: >=6 low, >=9 medium, all models high. The bands
    /// absorb the in-between counts, leaving the fine-tune pool empty.
    AtLeast,
}

/// Partition matrix rows into difficulty strata by flip count.
pub fn stratify(matrix: &MisledMatrix, total_models: usize, mode: StratifyMode) -> Vec<Stratum> {
    let mut buckets: BTreeMap<StratumLevel, Vec<String>> = BTreeMap::new();
    for level in StratumLevel::ALL {
        buckets.insert(level, Vec::new());
    }
    for (item_id, row) in &matrix.rows {
        let count = row.iter().filter(|f| **f).count();
        let level = match mode {
            StratifyMode::Exact => {
                if count == total_models {
                    StratumLevel::High
                } else if count == 9 {
                    StratumLevel::Medium
                } else if count == 6 {
                    StratumLevel::Low
                } else if matches!(count, 7 | 8 | 10 | 11) {
                    StratumLevel::FinetunePool
                } else {
                    StratumLevel::Unused
                }
            }
            StratifyMode::AtLeast => {
                if count == total_models {
                    StratumLevel::High
                } else if count >= 9 {
                    StratumLevel::Medium
                } else if count >= 6 {
                    StratumLevel::Low
                } else {
                    StratumLevel::Unused
                }
            }
        };
        buckets.get_mut(&level).unwrap().push(item_id.clone());
    }
    StratumLevel::ALL
        .into_iter()
        .map(|level| Stratum { level, item_ids: buckets.remove(&level).unwrap() })
        .collect()
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StratumSummary {
    pub count: usize,
    pub multiple_choice: usize,
    pub yes_no: usize,
    pub by_task: BTreeMap<String, usize>,
    pub by_sub_ability: BTreeMap<String, usize>,
    pub item_ids: Vec<String>,
}

/// The released benchmark: the low/medium/high strata with category
/// rollups. Rebuilding from the same inputs yields identical bytes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub version: u32,
    pub total: usize,
    pub strata: BTreeMap<String, StratumSummary>,
}

impl BenchmarkManifest {
    pub fn item_ids(&self) -> BTreeSet<String> {
        self.strata.values().flat_map(|s| s.item_ids.iter().cloned()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

/// Summarize the benchmark strata (low/medium/high only).
pub fn build_benchmark(strata: &[Stratum], items: &ItemCollection) -> BenchmarkManifest {
    build_benchmark_capped(strata, items, None, 0)
}

/// As [`build_benchmark`], optionally down-sampling each stratum to a
/// seeded cap.
pub fn build_benchmark_capped(
    strata: &[Stratum],
    items: &ItemCollection,
    cap_per_stratum: Option<usize>,
    cap_seed: u64,
) -> BenchmarkManifest {
    let mut out: BTreeMap<String, StratumSummary> = BTreeMap::new();
    let mut total = 0;
    for stratum in strata {
        if !matches!(
            stratum.level,
            StratumLevel::Low | StratumLevel::Medium | StratumLevel::High
        ) {
            continue;
        }
        let mut ids: Vec<String> = stratum.item_ids.clone();
        ids.sort();
        if let Some(cap) = cap_per_stratum {
            if ids.len() > cap {
                let mut rng =
                    seed::stream(cap_seed, &["benchmark-cap", stratum.level.as_str()], 0);
                for i in 0..cap {
                    let j = rng.random_range(i..ids.len());
                    ids.swap(i, j);
                }
                ids.truncate(cap);
                ids.sort();
            }
        }
        let mut summary = StratumSummary { count: ids.len(), ..Default::default() };
        for id in &ids {
            if let Some(item) = items.get(id) {
                match item.task_type {
                    TaskType::MultipleChoice => summary.multiple_choice += 1,
                    TaskType::YesNo => summary.yes_no += 1,
                }
                let task = format!("{:?}", item.category.task).to_lowercase();
                *summary.by_task.entry(task).or_default() += 1;
                *summary.by_sub_ability.entry(item.category.sub.to_string()).or_default() += 1;
            }
        }
        summary.item_ids = ids;
        total += summary.count;
        out.insert(stratum.level.as_str().to_string(), summary);
    }
    BenchmarkManifest { version: 1, total, strata: out }
}

/// Fine-tune data construction strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinetuneStrategy {
    /// Five separate single-template samples per item.
    S5,
    /// The five-template combination in one prompt.
    C5,
    /// The ten-template combination in one prompt.
    C10,
    /// Combined explicit prompts plus separately-inserted implicit
    /// guidance.
    MixedDefault,
}

/// One training conversation in `{"messages": [...]}` JSONL form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinetuneLine {
    pub messages: Vec<Message>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinetuneDataset {
    pub lines: Vec<FinetuneLine>,
    pub item_ids: BTreeSet<String>,
}

impl FinetuneDataset {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for line in &self.lines {
            out.push_str(&serde_json::to_string(line).expect("line serializes"));
            out.push('\n');
        }
        out
    }
}

/// Build the resistance-training dataset from the fine-tune pool.
///
/// Every line pairs a misleading query with the gold answer as the sole
/// assistant turn, under the task's benchmark system prompt. Explicit lines
/// inject templates aimed at a seeded wrong option; implicit lines insert
/// stored guidance texts separately. Items overlapping the benchmark
/// manifest are rejected.
#[allow(clippy::too_many_arguments)]
pub fn build_finetune(
    pool: &Stratum,
    benchmark: &BenchmarkManifest,
    items: &ItemCollection,
    guidance_by_item: &BTreeMap<String, Vec<String>>,
    n_explicit: usize,
    n_implicit: usize,
    strategy: FinetuneStrategy,
    build_seed: u64,
) -> Result<FinetuneDataset, BuilderError> {
    let benchmark_ids = benchmark.item_ids();
    for id in &pool.item_ids {
        if benchmark_ids.contains(id) {
            return Err(BuilderError::OverlapDetected(id.clone()));
        }
    }
    let mut pool_ids: Vec<&String> =
        pool.item_ids.iter().filter(|id| items.get(id).is_some()).collect();
    pool_ids.sort();

    let implicit_needed = match strategy {
        FinetuneStrategy::MixedDefault => n_implicit,
        _ => 0,
    };
    // Implicit lines draw only from items with stored guidance.
    let implicit_eligible: Vec<&String> = pool_ids
        .iter()
        .copied()
        .filter(|id| guidance_by_item.get(*id).is_some_and(|g| !g.is_empty()))
        .collect();

    if pool_ids.len() < n_explicit {
        return Err(BuilderError::PoolTooSmall { have: pool_ids.len(), need: n_explicit });
    }
    if implicit_eligible.len() < implicit_needed {
        return Err(BuilderError::PoolTooSmall {
            have: implicit_eligible.len(),
            need: implicit_needed,
        });
    }

    let mut lines = Vec::new();
    let mut used_ids = BTreeSet::new();

    let explicit_pick = seeded_sample(&pool_ids, n_explicit, build_seed, "finetune-explicit");
    for id in &explicit_pick {
        let item = items.get(id).expect("filtered to known items");
        let target = select_target_option(item, true, build_seed)
            .map_err(|_| BuilderError::UnknownItem((*id).clone()))?;
        match strategy {
            FinetuneStrategy::S5 => {
                for key in COMBINE_FIVE {
                    lines.push(training_line(item, &explicit_injection(&[key], &target)));
                }
            }
            FinetuneStrategy::C5 | FinetuneStrategy::MixedDefault => {
                lines.push(training_line(item, &explicit_injection(&COMBINE_FIVE, &target)));
            }
            FinetuneStrategy::C10 => {
                lines.push(training_line(item, &explicit_injection(&COMBINE_TEN, &target)));
            }
        }
        used_ids.insert((*id).clone());
    }

    if implicit_needed > 0 {
        let implicit_pick =
            seeded_sample(&implicit_eligible, implicit_needed, build_seed, "finetune-implicit");
        for id in &implicit_pick {
            let item = items.get(id).expect("filtered to known items");
            let guidance = guidance_by_item
                .get(id.as_str())
                .and_then(|g| g.first())
                .ok_or_else(|| BuilderError::NoGuidance { item: (*id).clone() })?;
            lines.push(training_line(item, guidance));
            used_ids.insert((*id).clone());
        }
    }

    // Unreachable given the pool pre-check; kept as a hard assertion.
    if let Some(id) = used_ids.intersection(&benchmark_ids).next() {
        return Err(BuilderError::OverlapDetected(id.clone()));
    }
    Ok(FinetuneDataset { lines, item_ids: used_ids })
}

fn explicit_injection(keys: &[TemplateKey], target: &str) -> String {
    let condition = Condition {
        kind: InstructionKind::Explicit,
        templates: keys.to_vec(),
        placement: crate::instruction::Placement::AfterQuestion,
        repeat: 1,
        variant_ids: Vec::new(),
        masked: false,
    };
    crate::instruction::instruction_block(&condition.with_target(target))
}

/// One conversation: benchmark system prompt, misleading query, gold answer.
fn training_line(item: &Item, injection: &str) -> FinetuneLine {
    let mut messages = crate::instruction::assemble_eval_messages(
        item,
        Some(injection),
        &Condition::none(),
        crate::instruction::DefensePrompt::None,
    );
    messages.push(Message {
        role: crate::model_client::Role::Assistant,
        content: crate::model_client::Content::Text(item.answer_key.clone()),
    });
    FinetuneLine { messages }
}

/// Seeded draw of `k` ids without replacement.
fn seeded_sample(ids: &[&String], k: usize, sample_seed: u64, label: &str) -> Vec<String> {
    let mut picked: Vec<String> = ids.iter().map(|s| (*s).clone()).collect();
    let mut rng = seed::stream(sample_seed, &[label], 0);
    for i in 0..k.min(picked.len()) {
        let j = rng.random_range(i..picked.len());
        picked.swap(i, j);
    }
    picked.truncate(k);
    picked
}
