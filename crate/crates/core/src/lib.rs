//! Harness for probing how firmly question-answering models hold their
//! answers when the prompt carries a misleading instruction.
//!
//! The workflow is two-staged: record each model's unmanipulated answer,
//! then re-ask the same question with an injected instruction that asserts
//! (explicitly) or insinuates (implicitly) a target option, and measure how
//! often correctness flips. On top of the raw transcripts the crate computes
//! consistency rates, flip rates for all four correctness transitions,
//! accuracy, and expected calibration error; stratifies items by how many
//! models they flipped; and emits resistance-training datasets in
//! conversation JSONL format.
//!
//! Modules map onto the stages of that workflow:
//!
//! - [`dataset`]: item loading, validation, and option shuffling
//! - [`instruction`]: the injected-instruction catalog and prompt assembly
//! - [`model_client`]: HTTP chat endpoints, a seeded simulator, parsers,
//!   and judge calls
//! - [`metrics`]: transcript statistics
//! - [`pipeline`]: two-stage run orchestration over an append-only store
//! - [`builder`]: benchmark stratification and fine-tune dataset emission
//! - [`report`]: grouped reports, scatter exports, and the simulated sweep
//! - [`testing`]: an in-process stub chat server for offline tests

pub mod builder;
pub mod dataset;
pub mod instruction;
pub mod metrics;
pub mod model_client;
pub mod pipeline;
pub mod report;
pub mod seed;
pub mod testing;
