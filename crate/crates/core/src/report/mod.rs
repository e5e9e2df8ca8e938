//! Grouped metric reports over a store snapshot, rendered as JSON, CSV,
//! aligned text, and SVG scatter exports.

mod svg;
mod sweep;

pub use svg::scatter_svg;
pub use sweep::{simulate_sweep, spearman, synthetic_items, SweepPoint, SweepReport};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::builder::BenchmarkManifest;
use crate::dataset::ItemCollection;
use crate::metrics::{
    accuracy, average_consistency_rate, consistency_rate, ece, transition_rates, MetricConfig,
    RunRecord, TransitionRates,
};
use crate::pipeline::RunStore;

/// Grouping dimensions for report rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupDim {
    Model,
    Difficulty,
    Task,
    SubAbility,
    QuestionType,
    Condition,
}

impl GroupDim {
    pub fn as_str(self) -> &'static str {
        match self {
            GroupDim::Model => "model",
            GroupDim::Difficulty => "difficulty",
            GroupDim::Task => "task",
            GroupDim::SubAbility => "sub_ability",
            GroupDim::QuestionType => "question_type",
            GroupDim::Condition => "condition",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "model" => Some(GroupDim::Model),
            "difficulty" => Some(GroupDim::Difficulty),
            "task" => Some(GroupDim::Task),
            "sub_ability" => Some(GroupDim::SubAbility),
            "question_type" => Some(GroupDim::QuestionType),
            "condition" => Some(GroupDim::Condition),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Text,
    Svg,
}

/// What to report on: which runs, how to group, which formats to emit.
#[derive(Debug, Clone)]
pub struct ReportSpec {
    pub run_ids: Vec<String>,
    pub group_by: Vec<GroupDim>,
    pub formats: BTreeSet<ReportFormat>,
    pub cfg: MetricConfig,
    /// Difficulty lookup for [`GroupDim::Difficulty`].
    pub manifest: Option<BenchmarkManifest>,
}

impl ReportSpec {
    pub fn new(run_ids: Vec<String>) -> Self {
        ReportSpec {
            run_ids,
            group_by: Vec::new(),
            formats: BTreeSet::from([ReportFormat::Text]),
            cfg: MetricConfig::default(),
            manifest: None,
        }
    }

    fn validate(&self) -> Result<(), ReportError> {
        if self.run_ids.is_empty() {
            return Err(ReportError::EmptySpec("at least one run id".into()));
        }
        if self.formats.is_empty() {
            return Err(ReportError::EmptySpec("at least one output format".into()));
        }
        if self.group_by.contains(&GroupDim::Difficulty) && self.manifest.is_none() {
            return Err(ReportError::MissingManifest);
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("report spec needs {0}")]
    EmptySpec(String),
    #[error("run {0:?} not present in the store")]
    MissingRun(String),
    #[error("grouping by difficulty requires a benchmark manifest")]
    MissingManifest,
    #[error("metric failure: {0}")]
    Metric(String),
}

/// One report row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupReport {
    pub key: BTreeMap<String, String>,
    /// Joined (baseline, misled) pairs feeding the transition rates.
    pub n_pairs: usize,
    pub accuracy_baseline: Option<f64>,
    pub accuracy_misled: Option<f64>,
    pub rates: TransitionRates,
    /// Mean consistency rate, when repeated stage-1 samples exist.
    pub acr: Option<f64>,
    /// Expected calibration error, when confidences exist.
    pub ece: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub version: u32,
    pub groups: Vec<GroupReport>,
}

/// Report renderings, keyed by requested format, plus scatter exports.
#[derive(Debug, Clone, Default)]
pub struct RenderedReport {
    pub report: Option<MetricReport>,
    pub json: Option<String>,
    pub csv: Option<String>,
    pub text: Option<String>,
    /// Per-item (flip share, consistency rate) points.
    pub scatter_csv: Option<String>,
    pub scatter_svg: Option<String>,
}

const METRIC_COLUMNS: [&str; 8] = [
    "accuracy_baseline",
    "accuracy_misled",
    "mr_true_to_true",
    "mr_true_to_false",
    "mr_false_to_false",
    "mr_false_to_true",
    "acr",
    "ece",
];

struct GroupData {
    baseline: Vec<RunRecord>,
    misled: Vec<RunRecord>,
    item_ids: BTreeSet<String>,
}

/// Compute the grouped report and render every requested format.
pub fn render_report(
    spec: &ReportSpec,
    store: &RunStore,
    items: &ItemCollection,
) -> Result<RenderedReport, ReportError> {
    spec.validate()?;
    let known_runs = store.run_ids();
    for run_id in &spec.run_ids {
        if !known_runs.contains(run_id) {
            return Err(ReportError::MissingRun(run_id.clone()));
        }
    }

    let difficulty_of = |item_id: &str| -> String {
        spec.manifest
            .as_ref()
            .and_then(|m| {
                m.strata
                    .iter()
                    .find(|(_, s)| s.item_ids.iter().any(|id| id == item_id))
                    .map(|(level, _)| level.clone())
            })
            .unwrap_or_else(|| "unstratified".to_string())
    };

    let mut groups: BTreeMap<Vec<(String, String)>, GroupData> = BTreeMap::new();
    for run_id in &spec.run_ids {
        let baselines: BTreeMap<String, RunRecord> = store
            .baseline_records(run_id)
            .into_iter()
            .map(|r| (r.item_id.clone(), r.clone()))
            .collect();
        for (condition_id, condition_summary) in store.conditions(run_id) {
            for misled in store.misled_records(run_id, &condition_id) {
                let Some(baseline) = baselines.get(&misled.item_id) else {
                    continue;
                };
                let Some(item) = items.get(&misled.item_id) else {
                    continue;
                };
                let mut key = Vec::new();
                for dim in &spec.group_by {
                    let value = match dim {
                        GroupDim::Model => misled.model_name.clone(),
                        GroupDim::Condition => condition_summary.clone(),
                        GroupDim::Difficulty => difficulty_of(&misled.item_id),
                        GroupDim::Task => format!("{:?}", item.category.task).to_lowercase(),
                        GroupDim::SubAbility => item.category.sub.to_string(),
                        GroupDim::QuestionType => match item.task_type {
                            crate::dataset::TaskType::MultipleChoice => {
                                "multiple_choice".to_string()
                            }
                            crate::dataset::TaskType::YesNo => "yes_no".to_string(),
                        },
                    };
                    key.push((dim.as_str().to_string(), value));
                }
                let data = groups.entry(key).or_insert_with(|| GroupData {
                    baseline: Vec::new(),
                    misled: Vec::new(),
                    item_ids: BTreeSet::new(),
                });
                data.baseline.push(baseline.clone());
                data.misled.push(misled.clone());
                data.item_ids.insert(misled.item_id.clone());
            }
        }
    }

    // Consistency transcripts per item across the spec's runs.
    let mut transcripts_by_item: BTreeMap<String, Vec<crate::metrics::Transcript>> =
        BTreeMap::new();
    for run_id in &spec.run_ids {
        for t in store.consistency_transcripts(run_id) {
            if t.len() >= 2 {
                transcripts_by_item.entry(t.item_id.clone()).or_default().push(t);
            }
        }
    }

    let mut rows = Vec::new();
    for (key, data) in &groups {
        let rates = transition_rates(&data.baseline, &data.misled, &spec.cfg)
            .map_err(|e| ReportError::Metric(e.to_string()))?;
        let accuracy_baseline = accuracy(&data.baseline, &spec.cfg).ok();
        let accuracy_misled = accuracy(&data.misled, &spec.cfg).ok();

        let group_transcripts: Vec<crate::metrics::Transcript> = data
            .item_ids
            .iter()
            .flat_map(|id| transcripts_by_item.get(id).cloned().unwrap_or_default())
            .collect();
        let acr = if group_transcripts.is_empty() {
            None
        } else {
            average_consistency_rate(&group_transcripts).ok()
        };

        let confidence_pairs: Vec<(f64, bool)> = data
            .baseline
            .iter()
            .chain(data.misled.iter())
            .filter_map(|r| {
                r.confidence.map(|c| (c, r.correct.unwrap_or(false)))
            })
            .collect();
        let group_ece = if confidence_pairs.is_empty() {
            None
        } else {
            ece(&confidence_pairs, spec.cfg.ece_bins).ok()
        };

        rows.push(GroupReport {
            key: key.iter().cloned().collect(),
            n_pairs: data.misled.len(),
            accuracy_baseline,
            accuracy_misled,
            rates,
            acr,
            ece: group_ece,
        });
    }

    let report = MetricReport { version: 1, groups: rows };

    let mut rendered = RenderedReport::default();
    if spec.formats.contains(&ReportFormat::Json) {
        rendered.json = Some(serde_json::to_string_pretty(&report).expect("report serializes"));
    }
    if spec.formats.contains(&ReportFormat::Csv) {
        rendered.csv = Some(render_csv(spec, &report));
    }
    if spec.formats.contains(&ReportFormat::Text) {
        rendered.text = Some(render_text(spec, &report));
    }
    if spec.formats.contains(&ReportFormat::Svg) || spec.formats.contains(&ReportFormat::Csv) {
        let scatter = scatter_points(&groups, &transcripts_by_item);
        if !scatter.is_empty() {
            let mut csv = String::from("item_id,flip_share,consistency_rate\n");
            for (id, x, y) in &scatter {
                csv.push_str(&format!("{id},{x},{y}\n"));
            }
            rendered.scatter_csv = Some(csv);
            if spec.formats.contains(&ReportFormat::Svg) {
                let points: Vec<(f64, f64)> =
                    scatter.iter().map(|(_, x, y)| (*x, *y)).collect();
                rendered.scatter_svg =
                    Some(scatter_svg(&points, "per-item flip share", "consistency rate"));
            }
        }
    }
    rendered.report = Some(report);
    Ok(rendered)
}

/// Per-item (flip share across pairs, consistency rate) for items that
/// have both.
fn scatter_points(
    groups: &BTreeMap<Vec<(String, String)>, GroupData>,
    transcripts_by_item: &BTreeMap<String, Vec<crate::metrics::Transcript>>,
) -> Vec<(String, f64, f64)> {
    let mut flips: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for data in groups.values() {
        for (b, m) in data.baseline.iter().zip(data.misled.iter()) {
            let entry = flips.entry(b.item_id.as_str()).or_insert((0, 0));
            entry.1 += 1;
            if b.correct.unwrap_or(false) != m.correct.unwrap_or(false) {
                entry.0 += 1;
            }
        }
    }
    let mut out = Vec::new();
    for (item_id, (flipped, total)) in flips {
        let Some(ts) = transcripts_by_item.get(item_id) else { continue };
        let crs: Vec<f64> = ts.iter().filter_map(|t| consistency_rate(t).ok()).collect();
        if crs.is_empty() || total == 0 {
            continue;
        }
        let cr = crs.iter().sum::<f64>() / crs.len() as f64;
        out.push((item_id.to_string(), flipped as f64 / total as f64, cr));
    }
    out
}

fn cell(value: Option<f64>) -> String {
    match value {
        // Rust's shortest-round-trip float formatting; identical across
        // CSV and JSON renderings.
        Some(v) => format!("{v}"),
        None => "N/A".to_string(),
    }
}

fn percent(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{:.2}%", v * 100.0),
        None => "N/A".to_string(),
    }
}

fn metric_values(row: &GroupReport) -> [Option<f64>; 8] {
    [
        row.accuracy_baseline,
        row.accuracy_misled,
        row.rates.true_to_true,
        row.rates.true_to_false,
        row.rates.false_to_false,
        row.rates.false_to_true,
        row.acr,
        row.ece,
    ]
}

/// Long-format CSV: one row per (group, metric).
fn render_csv(spec: &ReportSpec, report: &MetricReport) -> String {
    let mut out = String::new();
    for dim in &spec.group_by {
        out.push_str(dim.as_str());
        out.push(',');
    }
    out.push_str("n_pairs,metric,value\n");
    for row in &report.groups {
        for (metric, value) in METRIC_COLUMNS.iter().zip(metric_values(row)) {
            for dim in &spec.group_by {
                out.push_str(row.key.get(dim.as_str()).map(String::as_str).unwrap_or(""));
                out.push(',');
            }
            out.push_str(&format!("{},{},{}\n", row.n_pairs, metric, cell(value)));
        }
    }
    out
}

/// Aligned text table, rates as two-decimal percentages.
fn render_text(spec: &ReportSpec, report: &MetricReport) -> String {
    let mut header: Vec<String> =
        spec.group_by.iter().map(|d| d.as_str().to_string()).collect();
    header.extend(
        ["n", "acc(base)", "acc(misled)", "MR T>T", "MR T>F", "MR F>F", "MR F>T", "ACR", "ECE"]
            .map(String::from),
    );
    let mut table: Vec<Vec<String>> = vec![header];
    for row in &report.groups {
        let mut cells: Vec<String> = spec
            .group_by
            .iter()
            .map(|d| row.key.get(d.as_str()).cloned().unwrap_or_default())
            .collect();
        cells.push(row.n_pairs.to_string());
        let values = metric_values(row);
        for value in values.iter().take(6) {
            cells.push(percent(*value));
        }
        cells.push(percent(values[6]));
        cells.push(match values[7] {
            Some(v) => format!("{v:.4}"),
            None => "N/A".to_string(),
        });
        table.push(cells);
    }
    let cols = table[0].len();
    let mut widths = vec![0usize; cols];
    for row in &table {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    for (ri, row) in table.iter().enumerate() {
        let line: Vec<String> =
            row.iter().enumerate().map(|(i, c)| format!("{:<width$}", c, width = widths[i])).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if ri == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            out.push_str(&rule.join("  "));
            out.push('\n');
        }
    }
    out
}
