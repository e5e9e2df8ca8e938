//! Append-only JSONL run store.
//!
//! One record per line, tagged by kind and carrying a schema version.
//! Appends are idempotent on the record key, so resuming an interrupted
//! plan re-issues only the missing work, and replaying the log rebuilds
//! identical in-memory state.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::metrics::{RunRecord, Stage, Transcript};

/// Condition key under which stage-1 records are stored.
pub const BASELINE_CONDITION: &str = "baseline";

/// Schema version written on every line.
pub const STORE_VERSION: u32 = 1;

/// A generated implicit guidance variant, with its leak-masked twin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceRecord {
    pub run_id: String,
    pub item_id: String,
    pub variant_id: u32,
    /// "help" (toward the true key) or "mislead" (toward `claimed`).
    pub direction: String,
    /// The option the generator was told is correct.
    pub claimed: String,
    pub text: String,
    pub masked_text: String,
    pub leaked: bool,
}

/// The stage-2 target fixed at stage-1 time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRecord {
    pub run_id: String,
    pub item_id: String,
    pub stage1_correct: bool,
    pub target: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum StoreLine {
    Run {
        v: u32,
        #[serde(flatten)]
        record: RunRecord,
    },
    Guidance {
        v: u32,
        #[serde(flatten)]
        record: GuidanceRecord,
    },
    Target {
        v: u32,
        #[serde(flatten)]
        record: TargetRecord,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("store line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type RunKey = (String, String, Stage, String, u64);

/// The append-only record log.
pub struct RunStore {
    path: PathBuf,
    writer: BufWriter<File>,
    run_keys: HashSet<RunKey>,
    runs: Vec<RunRecord>,
    guidance: BTreeMap<(String, String, u32), GuidanceRecord>,
    targets: BTreeMap<(String, String), TargetRecord>,
    /// Per-run logical clock; stamped onto appended run records.
    clocks: HashMap<String, u64>,
}

impl RunStore {
    /// Open (or create) a store file and replay its log.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let mut run_keys = HashSet::new();
        let mut runs: Vec<RunRecord> = Vec::new();
        let mut guidance = BTreeMap::new();
        let mut targets = BTreeMap::new();
        let mut clocks: HashMap<String, u64> = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (lineno, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let parsed: StoreLine =
                    serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
                        line: lineno + 1,
                        reason: e.to_string(),
                    })?;
                match parsed {
                    StoreLine::Run { record, .. } => {
                        let key = run_key(&record);
                        if run_keys.insert(key) {
                            let clock = clocks.entry(record.run_id.clone()).or_insert(0);
                            *clock = (*clock).max(record.timestamp + 1);
                            runs.push(record);
                        }
                    }
                    StoreLine::Guidance { record, .. } => {
                        let key =
                            (record.run_id.clone(), record.item_id.clone(), record.variant_id);
                        guidance.entry(key).or_insert(record);
                    }
                    StoreLine::Target { record, .. } => {
                        let key = (record.run_id.clone(), record.item_id.clone());
                        targets.entry(key).or_insert(record);
                    }
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(RunStore {
            path: path.to_path_buf(),
            writer: BufWriter::new(file),
            run_keys,
            runs,
            guidance,
            targets,
            clocks,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn write_line(&mut self, line: &StoreLine) -> Result<(), StoreError> {
        let json = serde_json::to_string(line).expect("store line serializes");
        writeln!(self.writer, "{json}")?;
        self.writer.flush()?;
        Ok(())
    }

    pub fn has_run_record(
        &self,
        run_id: &str,
        item_id: &str,
        stage: Stage,
        condition: &str,
        sample: u64,
    ) -> bool {
        self.run_keys.contains(&(
            run_id.to_string(),
            item_id.to_string(),
            stage,
            condition.to_string(),
            sample,
        ))
    }

    /// Append a run record, stamping its logical timestamp. A duplicate key
    /// is a no-op returning `false`.
    pub fn append_run(&mut self, mut record: RunRecord) -> Result<bool, StoreError> {
        let clock = self.clocks.entry(record.run_id.clone()).or_insert(0);
        record.timestamp = *clock;
        let key = run_key(&record);
        if self.run_keys.contains(&key) {
            return Ok(false);
        }
        *clock += 1;
        self.write_line(&StoreLine::Run { v: STORE_VERSION, record: record.clone() })?;
        self.run_keys.insert(key);
        self.runs.push(record);
        Ok(true)
    }

    pub fn has_guidance(&self, run_id: &str, item_id: &str, variant_id: u32) -> bool {
        self.guidance
            .contains_key(&(run_id.to_string(), item_id.to_string(), variant_id))
    }

    pub fn append_guidance(&mut self, record: GuidanceRecord) -> Result<bool, StoreError> {
        let key = (record.run_id.clone(), record.item_id.clone(), record.variant_id);
        if self.guidance.contains_key(&key) {
            return Ok(false);
        }
        self.write_line(&StoreLine::Guidance { v: STORE_VERSION, record: record.clone() })?;
        self.guidance.insert(key, record);
        Ok(true)
    }

    pub fn append_target(&mut self, record: TargetRecord) -> Result<bool, StoreError> {
        let key = (record.run_id.clone(), record.item_id.clone());
        if self.targets.contains_key(&key) {
            return Ok(false);
        }
        self.write_line(&StoreLine::Target { v: STORE_VERSION, record: record.clone() })?;
        self.targets.insert(key, record);
        Ok(true)
    }

    pub fn target(&self, run_id: &str, item_id: &str) -> Option<&TargetRecord> {
        self.targets.get(&(run_id.to_string(), item_id.to_string()))
    }

    pub fn guidance(&self, run_id: &str, item_id: &str, variant_id: u32) -> Option<&GuidanceRecord> {
        self.guidance
            .get(&(run_id.to_string(), item_id.to_string(), variant_id))
    }

    pub fn guidance_for_item(&self, run_id: &str, item_id: &str) -> Vec<&GuidanceRecord> {
        self.guidance
            .range((run_id.to_string(), item_id.to_string(), 0)..)
            .take_while(|((r, i, _), _)| r == run_id && i == item_id)
            .map(|(_, v)| v)
            .collect()
    }

    pub fn records(&self) -> &[RunRecord] {
        &self.runs
    }

    pub fn run_ids(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for r in &self.runs {
            if !seen.contains(&r.run_id) {
                seen.push(r.run_id.clone());
            }
        }
        seen
    }

    /// Condition ids present in a run's misled records, with their
    /// summaries, in first-seen order.
    pub fn conditions(&self, run_id: &str) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        for r in &self.runs {
            if r.run_id == run_id
                && r.stage == Stage::Misled
                && !out.iter().any(|(c, _)| c == &r.condition)
            {
                out.push((r.condition.clone(), r.condition_summary.clone()));
            }
        }
        out
    }

    /// Stage-1 records at sample ordinal 0, the baseline pass.
    pub fn baseline_records(&self, run_id: &str) -> Vec<&RunRecord> {
        self.runs
            .iter()
            .filter(|r| r.run_id == run_id && r.stage == Stage::Baseline && r.sample == 0)
            .collect()
    }

    /// Misled records for one condition at sample ordinal 0.
    pub fn misled_records(&self, run_id: &str, condition: &str) -> Vec<&RunRecord> {
        self.runs
            .iter()
            .filter(|r| {
                r.run_id == run_id
                    && r.stage == Stage::Misled
                    && r.condition == condition
                    && r.sample == 0
            })
            .collect()
    }

    /// Misled variant runs for one item under a condition, ordered by
    /// sample ordinal.
    pub fn variant_runs(&self, run_id: &str, condition: &str, item_id: &str) -> Vec<&RunRecord> {
        let mut out: Vec<&RunRecord> = self
            .runs
            .iter()
            .filter(|r| {
                r.run_id == run_id
                    && r.stage == Stage::Misled
                    && r.condition == condition
                    && r.item_id == item_id
            })
            .collect();
        out.sort_by_key(|r| r.sample);
        out
    }

    /// Per-item transcripts over all stage-1 samples (consistency runs).
    pub fn consistency_transcripts(&self, run_id: &str) -> Vec<Transcript> {
        let mut by_item: BTreeMap<&str, Vec<RunRecord>> = BTreeMap::new();
        for r in &self.runs {
            if r.run_id == run_id && r.stage == Stage::Baseline {
                by_item.entry(r.item_id.as_str()).or_default().push(r.clone());
            }
        }
        by_item
            .into_iter()
            .map(|(item_id, mut records)| {
                records.sort_by_key(|r| r.sample);
                Transcript { item_id: item_id.to_string(), records }
            })
            .collect()
    }
}

fn run_key(record: &RunRecord) -> RunKey {
    (
        record.run_id.clone(),
        record.item_id.clone(),
        record.stage,
        record.condition.clone(),
        record.sample,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::record;

    fn keyed(item: &str, stage: Stage, sample: u64) -> RunRecord {
        let mut r = record(item, stage, Some("A"), Some(true));
        r.sample = sample;
        r.condition = match stage {
            Stage::Baseline => BASELINE_CONDITION.into(),
            Stage::Misled => "cond-x".into(),
        };
        r
    }

    #[test]
    fn duplicate_append_is_noop() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let mut store = RunStore::open(&path).unwrap();
        assert!(store.append_run(keyed("i0", Stage::Baseline, 0)).unwrap());
        assert!(!store.append_run(keyed("i0", Stage::Baseline, 0)).unwrap());
        assert!(store.append_run(keyed("i0", Stage::Baseline, 1)).unwrap());
        assert_eq!(store.records().len(), 2);
    }

    #[test]
    fn replay_reconstructs_state_and_clock() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        {
            let mut store = RunStore::open(&path).unwrap();
            store.append_run(keyed("i0", Stage::Baseline, 0)).unwrap();
            store.append_run(keyed("i1", Stage::Baseline, 0)).unwrap();
            store
                .append_target(TargetRecord {
                    run_id: "r1".into(),
                    item_id: "i0".into(),
                    stage1_correct: true,
                    target: "B".into(),
                })
                .unwrap();
        }
        let mut store = RunStore::open(&path).unwrap();
        assert!(store.has_run_record("r1", "i0", Stage::Baseline, BASELINE_CONDITION, 0));
        assert_eq!(store.target("r1", "i0").unwrap().target, "B");
        assert_eq!(store.records()[0].timestamp, 0);
        assert_eq!(store.records()[1].timestamp, 1);
        // The clock continues after replay.
        store.append_run(keyed("i2", Stage::Baseline, 0)).unwrap();
        assert_eq!(store.records()[2].timestamp, 2);
    }

    #[test]
    fn guidance_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let mut store = RunStore::open(&path).unwrap();
        let g = GuidanceRecord {
            run_id: "r1".into(),
            item_id: "i0".into(),
            variant_id: 2,
            direction: "mislead".into(),
            claimed: "B".into(),
            text: "the answer is B".into(),
            masked_text: "the answer is [MASK]".into(),
            leaked: true,
        };
        assert!(store.append_guidance(g.clone()).unwrap());
        assert!(!store.append_guidance(g.clone()).unwrap());
        drop(store);
        let store = RunStore::open(&path).unwrap();
        assert_eq!(store.guidance("r1", "i0", 2), Some(&g));
        assert_eq!(store.guidance_for_item("r1", "i0"), vec![&g]);
        assert!(store.guidance_for_item("r1", "i1").is_empty());
    }

    #[test]
    fn variant_runs_sorted_by_sample() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let mut store = RunStore::open(&path).unwrap();
        for sample in [2u64, 0, 1] {
            store.append_run(keyed("i0", Stage::Misled, sample)).unwrap();
        }
        let runs = store.variant_runs("r1", "cond-x", "i0");
        let samples: Vec<u64> = runs.iter().map(|r| r.sample).collect();
        assert_eq!(samples, vec![0, 1, 2]);
    }
}
