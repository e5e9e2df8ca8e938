//! Two-stage run orchestration: baseline, misled, consistency, and
//! implicit-guidance generation over an append-only store, with bounded
//! concurrency, resume, and deterministic replay.
//!
//! Determinism contract: per-item randomness derives from
//! `(plan.seed, item id)` streams, store appends happen in plan order
//! regardless of completion order, and record timestamps are logical
//! sequence numbers. Identical `(plan, seed, cassette-or-sim)` therefore
//! produce byte-identical store files.

mod store;

pub use store::{
    GuidanceRecord, RunStore, StoreError, TargetRecord, BASELINE_CONDITION, STORE_VERSION,
};

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Item, ItemCollection};
use crate::instruction::{
    assemble_eval_messages, assemble_implicit_gen_prompt, instruction_block, mask_answer_leak,
    select_target_option, Condition, DefensePrompt, GuidanceDirection, InstructionKind,
};
use crate::metrics::{RunRecord, Stage};
use crate::model_client::{parse_choice, simulate, ChatClient, ClientError, Endpoint, SimParams};
use crate::seed;

/// What answers the plan's prompts: a live endpoint or the simulator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    Endpoint(Endpoint),
    Sim(SimParams),
}

/// A declarative description of one evaluation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunPlan {
    pub run_id: String,
    pub source: ModelSource,
    #[serde(default = "default_conditions")]
    pub conditions: Vec<Condition>,
    #[serde(default)]
    pub defense: DefensePrompt,
    #[serde(default = "default_one")]
    pub n_baseline_samples: u64,
    pub seed: u64,
}

fn default_one() -> u64 {
    1
}

fn default_conditions() -> Vec<Condition> {
    vec![Condition::headline()]
}

impl RunPlan {
    pub fn sim(run_id: &str, params: SimParams, run_seed: u64) -> Self {
        RunPlan {
            run_id: run_id.to_string(),
            source: ModelSource::Sim(params),
            conditions: default_conditions(),
            defense: DefensePrompt::None,
            n_baseline_samples: 1,
            seed: run_seed,
        }
    }

    pub fn model_label(&self) -> String {
        match &self.source {
            ModelSource::Endpoint(ep) => ep.model_name.clone(),
            ModelSource::Sim(_) => "simulated".to_string(),
        }
    }

    fn validate(&self) -> Result<(), PipelineError> {
        if self.run_id.is_empty() {
            return Err(PipelineError::InvalidPlan("run_id must be non-empty".into()));
        }
        if self.n_baseline_samples == 0 {
            return Err(PipelineError::InvalidPlan("n_baseline_samples must be >= 1".into()));
        }
        for condition in &self.conditions {
            condition
                .validate()
                .map_err(|e| PipelineError::InvalidPlan(e.to_string()))?;
        }
        if let ModelSource::Sim(params) = &self.source {
            params.validate().map_err(|e| PipelineError::InvalidPlan(e.to_string()))?;
        }
        Ok(())
    }
}

/// Plan file schema (TOML): the plan plus the path of its item file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanFile {
    pub items: String,
    #[serde(flatten)]
    pub plan: RunPlan,
}

impl PlanFile {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(StoreError::Io)?;
        toml::from_str(&text).map_err(|e| PipelineError::InvalidPlan(e.to_string()))
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    /// Jobs named by the plan.
    pub requested: usize,
    /// Jobs skipped because their key was already in the store.
    pub skipped: usize,
    /// Jobs newly persisted.
    pub completed: usize,
    /// Jobs that failed at the endpoint (not persisted).
    pub failed: usize,
    /// Persisted responses that did not parse to an option.
    pub unparseable: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("items missing a baseline record: {0:?}")]
    MissingBaseline(Vec<String>),
    #[error("no stored guidance variant {variant} for item {item:?} (run the implicit-gen stage first)")]
    MissingGuidance { item: String, variant: u32 },
    #[error("endpoint errors on {} item(s) (first: {first}); partial progress persisted", failed.len())]
    Endpoint { failed: Vec<String>, first: String, summary: RunSummary },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0}")]
    Client(String),
}

/// Executes plans against a store.
pub struct Runner {
    plan: RunPlan,
    client: Option<ChatClient>,
}

/// One unit of model work.
struct Job {
    item_index: usize,
    stage: Stage,
    condition_id: String,
    condition_summary: String,
    /// Injection block placed into the user turn, if any.
    injection: Option<String>,
    /// Condition whose placement/repeat govern composition.
    condition: Condition,
    sample: u64,
    call_seed: u64,
    /// Injected target for the simulator.
    sim_target: Option<String>,
}

impl Runner {
    pub fn new(plan: RunPlan) -> Result<Self, PipelineError> {
        plan.validate()?;
        let client = match &plan.source {
            ModelSource::Endpoint(ep) => Some(
                ChatClient::new(ep.clone()).map_err(|e| PipelineError::Client(e.to_string()))?,
            ),
            ModelSource::Sim(_) => None,
        };
        Ok(Runner { plan, client })
    }

    pub fn with_cassette(mut self, cassette: std::sync::Arc<crate::model_client::Cassette>) -> Self {
        if let Some(client) = self.client.take() {
            self.client = Some(client.with_cassette(cassette));
        }
        self
    }

    pub fn plan(&self) -> &RunPlan {
        &self.plan
    }

    /// Seed namespace for one stage, so baseline and misled draws come from
    /// unrelated streams.
    fn stage_seed(&self, label: &str) -> u64 {
        seed::stream(self.plan.seed, &["stage", label], 0).random()
    }

    /// Stage 1: record the model's responses without any manipulation.
    /// With `n_baseline_samples` = m, every item gets samples 0..m.
    pub fn run_baseline(
        &self,
        items: &ItemCollection,
        store: &mut RunStore,
    ) -> Result<RunSummary, PipelineError> {
        if self.plan.n_baseline_samples != 1 {
            return Err(PipelineError::InvalidPlan(
                "baseline misleading runs use n_baseline_samples = 1; use run_consistency for repeated sampling".into(),
            ));
        }
        self.run_stage1(items, store, 1)
    }

    /// Stage 1 repeated: m samples per item for consistency statistics.
    pub fn run_consistency(
        &self,
        items: &ItemCollection,
        store: &mut RunStore,
    ) -> Result<RunSummary, PipelineError> {
        let m = self.plan.n_baseline_samples;
        if m < 2 {
            return Err(PipelineError::InvalidPlan(
                "consistency runs need n_baseline_samples >= 2".into(),
            ));
        }
        self.run_stage1(items, store, m)
    }

    fn run_stage1(
        &self,
        items: &ItemCollection,
        store: &mut RunStore,
        samples: u64,
    ) -> Result<RunSummary, PipelineError> {
        let call_seed = self.stage_seed("baseline");
        let mut jobs = Vec::new();
        for (item_index, _) in items.iter().enumerate() {
            for sample in 0..samples {
                jobs.push(Job {
                    item_index,
                    stage: Stage::Baseline,
                    condition_id: BASELINE_CONDITION.to_string(),
                    condition_summary: "baseline".to_string(),
                    injection: None,
                    condition: Condition::none(),
                    sample,
                    call_seed,
                    sim_target: None,
                });
            }
        }
        self.execute(items, store, jobs)
    }

    /// Stage 2: re-ask every item with each condition's injection, probing
    /// away from the stage-1 answer. Requires stage-1 records.
    pub fn run_misled(
        &self,
        items: &ItemCollection,
        store: &mut RunStore,
    ) -> Result<RunSummary, PipelineError> {
        let baseline_correct = self.baseline_correctness(items, store)?;
        let call_seed = self.stage_seed("misled");

        let mut jobs = Vec::new();
        for (item_index, item) in items.iter().enumerate() {
            let target = self.ensure_target(store, item, baseline_correct[&item.id])?;
            for condition in &self.plan.conditions {
                let condition_id = condition.id();
                let summary = condition.summary();
                match condition.kind {
                    InstructionKind::Explicit => {
                        let spec = condition.with_target(&target);
                        jobs.push(Job {
                            item_index,
                            stage: Stage::Misled,
                            condition_id: condition_id.clone(),
                            condition_summary: summary.clone(),
                            injection: Some(instruction_block(&spec)),
                            condition: condition.clone(),
                            sample: 0,
                            call_seed,
                            sim_target: Some(target.clone()),
                        });
                    }
                    InstructionKind::None => {
                        jobs.push(Job {
                            item_index,
                            stage: Stage::Misled,
                            condition_id: condition_id.clone(),
                            condition_summary: summary.clone(),
                            injection: None,
                            condition: condition.clone(),
                            sample: 0,
                            call_seed,
                            sim_target: None,
                        });
                    }
                    InstructionKind::Implicit => {
                        for &variant in &condition.variant_ids {
                            let guidance = store
                                .guidance(&self.plan.run_id, &item.id, variant)
                                .ok_or_else(|| PipelineError::MissingGuidance {
                                    item: item.id.clone(),
                                    variant,
                                })?;
                            let text = if condition.masked {
                                guidance.masked_text.clone()
                            } else {
                                guidance.text.clone()
                            };
                            jobs.push(Job {
                                item_index,
                                stage: Stage::Misled,
                                condition_id: condition_id.clone(),
                                condition_summary: summary.clone(),
                                injection: Some(text),
                                condition: condition.clone(),
                                sample: variant as u64,
                                call_seed,
                                sim_target: Some(target.clone()),
                            });
                        }
                    }
                }
            }
        }
        self.execute(items, store, jobs)
    }

    /// Generate n implicit guidance variants per item (masked twins stored
    /// alongside), directed by stage-1 correctness: misleading guidance for
    /// items answered right, helping guidance for items answered wrong.
    pub fn generate_implicit_variants(
        &self,
        items: &ItemCollection,
        store: &mut RunStore,
        generator: &ChatClient,
        n_variants: u32,
        text_only: bool,
    ) -> Result<RunSummary, PipelineError> {
        let baseline_correct = self.baseline_correctness(items, store)?;
        let mut summary = RunSummary {
            run_id: self.plan.run_id.clone(),
            ..Default::default()
        };
        for item in items.iter() {
            summary.requested += n_variants as usize;
            let missing: Vec<u32> = (0..n_variants)
                .filter(|v| !store.has_guidance(&self.plan.run_id, &item.id, *v))
                .collect();
            summary.skipped += n_variants as usize - missing.len();
            if missing.is_empty() {
                continue;
            }
            let stage1_correct = baseline_correct[&item.id];
            let target = self.ensure_target(store, item, stage1_correct)?;
            let direction = if stage1_correct {
                GuidanceDirection::MisleadToWrong { claimed: target.clone() }
            } else {
                GuidanceDirection::HelpToRight
            };
            let request = assemble_implicit_gen_prompt(item, &direction, n_variants, text_only)
                .map_err(|e| PipelineError::InvalidPlan(e.to_string()))?;
            let reply = match generator.chat(&request) {
                Ok(reply) => reply,
                Err(err) => {
                    summary.failed += missing.len();
                    if is_fatal(&err) {
                        return Err(PipelineError::Client(err.to_string()));
                    }
                    continue;
                }
            };
            let lines: Vec<&str> =
                reply.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
            for variant in missing {
                // A reply with fewer lines than requested is recorded as a
                // parse failure for the absent variants, not a fatal error.
                let Some(text) = lines.get(variant as usize) else {
                    summary.unparseable += 1;
                    continue;
                };
                let (masked_text, leaked) = mask_answer_leak(text, item);
                let appended = store.append_guidance(GuidanceRecord {
                    run_id: self.plan.run_id.clone(),
                    item_id: item.id.clone(),
                    variant_id: variant,
                    direction: match &direction {
                        GuidanceDirection::HelpToRight => "help".to_string(),
                        GuidanceDirection::MisleadToWrong { .. } => "mislead".to_string(),
                    },
                    claimed: target.clone(),
                    text: text.to_string(),
                    masked_text,
                    leaked,
                })?;
                if appended {
                    summary.completed += 1;
                }
            }
        }
        Ok(summary)
    }

    fn baseline_correctness(
        &self,
        items: &ItemCollection,
        store: &RunStore,
    ) -> Result<BTreeMap<String, bool>, PipelineError> {
        let mut map = BTreeMap::new();
        let mut missing = Vec::new();
        for item in items.iter() {
            if let Some(record) = store
                .baseline_records(&self.plan.run_id)
                .into_iter()
                .find(|r| r.item_id == item.id)
            {
                // Unparseable stage-1 responses probe as incorrect.
                map.insert(item.id.clone(), record.correct.unwrap_or(false));
            } else {
                missing.push(item.id.clone());
            }
        }
        if !missing.is_empty() {
            return Err(PipelineError::MissingBaseline(missing));
        }
        Ok(map)
    }

    /// The stage-2 target is fixed once and stored; later calls reuse it.
    fn ensure_target(
        &self,
        store: &mut RunStore,
        item: &Item,
        stage1_correct: bool,
    ) -> Result<String, PipelineError> {
        if let Some(existing) = store.target(&self.plan.run_id, &item.id) {
            return Ok(existing.target.clone());
        }
        let target = select_target_option(item, stage1_correct, self.plan.seed)
            .map_err(|e| PipelineError::InvalidPlan(e.to_string()))?;
        store.append_target(TargetRecord {
            run_id: self.plan.run_id.clone(),
            item_id: item.id.clone(),
            stage1_correct,
            target: target.clone(),
        })?;
        Ok(target)
    }

    fn execute(
        &self,
        items: &ItemCollection,
        store: &mut RunStore,
        jobs: Vec<Job>,
    ) -> Result<RunSummary, PipelineError> {
        let mut summary = RunSummary {
            run_id: self.plan.run_id.clone(),
            requested: jobs.len(),
            ..Default::default()
        };

        let todo: Vec<Job> = jobs
            .into_iter()
            .filter(|job| {
                let item = &items.items()[job.item_index];
                let present = store.has_run_record(
                    &self.plan.run_id,
                    &item.id,
                    job.stage,
                    &job.condition_id,
                    job.sample,
                );
                if present {
                    summary.skipped += 1;
                }
                !present
            })
            .collect();

        let workers = match &self.plan.source {
            ModelSource::Endpoint(ep) => ep.max_in_flight.max(1),
            ModelSource::Sim(_) => 1,
        };

        let mut failures: Vec<String> = Vec::new();
        let mut first_error: Option<String> = None;
        let work = |job: &Job| -> Result<RunRecord, (String, String)> {
            let item = &items.items()[job.item_index];
            self.perform(items, job).map_err(|e| (item.id.clone(), e.to_string()))
        };
        execute_ordered(&todo, workers, work, |_, outcome| match outcome {
            Ok(record) => {
                if record.parsed.is_none() {
                    summary.unparseable += 1;
                }
                match store.append_run(record) {
                    Ok(true) => {
                        summary.completed += 1;
                        Ok(())
                    }
                    Ok(false) => Ok(()),
                    Err(e) => Err(PipelineError::Store(e)),
                }
            }
            Err((item_id, message)) => {
                if first_error.is_none() {
                    first_error = Some(message);
                }
                failures.push(item_id);
                Ok(())
            }
        })?;

        if !failures.is_empty() {
            summary.failed = failures.len();
            return Err(PipelineError::Endpoint {
                failed: failures,
                first: first_error.unwrap_or_default(),
                summary,
            });
        }
        Ok(summary)
    }

    /// Run one job to a finished record (no store access; thread-safe).
    fn perform(&self, items: &ItemCollection, job: &Job) -> Result<RunRecord, ClientError> {
        let item = &items.items()[job.item_index];
        let raw = match &self.plan.source {
            ModelSource::Sim(params) => simulate(
                item,
                job.sim_target.as_deref(),
                params,
                job.call_seed,
                job.sample,
            )?,
            ModelSource::Endpoint(_) => {
                let client = self.client.as_ref().expect("endpoint source builds a client");
                let messages = assemble_eval_messages(
                    item,
                    job.injection.as_deref(),
                    &job.condition,
                    self.plan.defense,
                );
                client.chat(&messages)?
            }
        };
        let (parsed, correct) = match parse_choice(&raw, item) {
            Ok(p) => {
                let correct = p.token == item.answer_key;
                (Some(p), Some(correct))
            }
            Err(_) => (None, None),
        };
        Ok(RunRecord {
            run_id: self.plan.run_id.clone(),
            item_id: item.id.clone(),
            model_name: self.plan.model_label(),
            stage: job.stage,
            condition: job.condition_id.clone(),
            condition_summary: job.condition_summary.clone(),
            sample: job.sample,
            raw,
            parsed,
            correct,
            confidence: None,
            timestamp: 0, // stamped by the store
            seed: job.call_seed,
        })
    }
}

fn is_fatal(err: &ClientError) -> bool {
    matches!(err, ClientError::AuthMissing(_) | ClientError::Config(_))
}

/// Run jobs on up to `workers` threads, delivering results to the sink in
/// job order regardless of completion order. Out-of-order completions wait
/// in a reorder buffer, so a crash loses at most the in-flight tail.
fn execute_ordered<J, R, E>(
    jobs: &[J],
    workers: usize,
    work: impl Fn(&J) -> R + Sync,
    mut sink: impl FnMut(usize, R) -> Result<(), E>,
) -> Result<(), E>
where
    J: Sync,
    R: Send,
{
    if workers <= 1 || jobs.len() <= 1 {
        for (i, job) in jobs.iter().enumerate() {
            sink(i, work(job))?;
        }
        return Ok(());
    }
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, R)>();
    std::thread::scope(|scope| {
        for _ in 0..workers.min(jobs.len()) {
            let tx = tx.clone();
            let next = &next;
            let work = &work;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let result = work(&jobs[i]);
                if tx.send((i, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        let mut pending: BTreeMap<usize, R> = BTreeMap::new();
        let mut next_write = 0usize;
        let mut outcome: Result<(), E> = Ok(());
        for (i, result) in rx {
            pending.insert(i, result);
            while let Some(result) = pending.remove(&next_write) {
                if outcome.is_ok() {
                    outcome = sink(next_write, result);
                }
                next_write += 1;
            }
        }
        outcome
    })
}
