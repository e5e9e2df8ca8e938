//! Simulated susceptibility sweep: the reproducible stand-in for the
//! flip-rate-versus-consistency relationship. Each sweep level runs the
//! full baseline + misled pipeline at susceptibility p and a consistency
//! run whose answer-flip noise is coupled to p, then reports Spearman rank
//! correlation between the measured flip rate and mean consistency.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{CategoryLabel, Choice, Item, ItemCollection, SubAbility, TaskCategory, TaskType};
use crate::metrics::{misleading_rate, MetricConfig, RunRecord};
use crate::model_client::SimParams;
use crate::pipeline::{PipelineError, RunPlan, RunStore, Runner};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub susceptibility: f64,
    /// Coupled answer-flip noise used for the consistency run.
    pub noise: f64,
    pub mr_true_to_false: Option<f64>,
    pub mean_cr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub n_items: usize,
    pub m_samples: u64,
    pub points: Vec<SweepPoint>,
    /// Spearman rank correlation of (MR, mean CR); `None` when fewer than
    /// two usable points exist or a rank variance is zero.
    pub spearman: Option<f64>,
}

/// Synthetic four-option items for simulator studies.
pub fn synthetic_items(n: usize) -> ItemCollection {
    let items: Vec<Item> = (0..n)
        .map(|i| {
            let options = (0..4)
                .map(|o| Choice {
                    token: char::from(b'A' + o as u8).to_string(),
                    text: format!("choice {o} of synthetic item {i}"),
                })
                .collect();
            Item {
                id: format!("syn-{i}"),
                question_text: format!("synthetic question {i}?"),
                image_ref: None,
                options,
                answer_key: char::from(b'A' + (i % 4) as u8).to_string(),
                task_type: TaskType::MultipleChoice,
                source_dataset: "synthetic".into(),
                category: CategoryLabel { task: TaskCategory::Perception, sub: SubAbility::VI },
            }
        })
        .collect();
    ItemCollection::new(items).expect("synthetic items are valid")
}

/// Run the sweep. Stores land under `work_dir`, one file per level.
pub fn simulate_sweep(
    susceptibilities: &[f64],
    n_items: usize,
    m_samples: u64,
    sweep_seed: u64,
    work_dir: &Path,
) -> Result<SweepReport, PipelineError> {
    if susceptibilities.is_empty() {
        return Err(PipelineError::InvalidPlan("susceptibilities must be non-empty".into()));
    }
    if n_items == 0 {
        return Err(PipelineError::InvalidPlan("n_items must be positive".into()));
    }
    if m_samples < 2 {
        return Err(PipelineError::InvalidPlan("m_samples must be at least 2".into()));
    }
    let items = synthetic_items(n_items);
    let cfg = MetricConfig::default();
    let mut points = Vec::with_capacity(susceptibilities.len());
    for (idx, &p) in susceptibilities.iter().enumerate() {
        let mut store = RunStore::open(&work_dir.join(format!("sweep-{idx}.jsonl")))?;

        // Two-stage flip measurement at susceptibility p.
        let plan = RunPlan::sim(
            &format!("sweep-{idx}"),
            SimParams { base_accuracy: 1.0, susceptibility: p, noise: 0.0 },
            sweep_seed.wrapping_add(idx as u64),
        );
        let runner = Runner::new(plan.clone())?;
        runner.run_baseline(&items, &mut store)?;
        runner.run_misled(&items, &mut store)?;
        let baseline: Vec<RunRecord> =
            store.baseline_records(&plan.run_id).into_iter().cloned().collect();
        let condition = plan.conditions[0].id();
        let misled: Vec<RunRecord> =
            store.misled_records(&plan.run_id, &condition).into_iter().cloned().collect();
        let mr = misleading_rate(&baseline, &misled, true, false, &cfg)
            .map_err(|e| PipelineError::InvalidPlan(e.to_string()))?;

        // Consistency run with answer-flip noise coupled to p.
        let mut cr_plan = RunPlan::sim(
            &format!("sweep-{idx}-cr"),
            SimParams { base_accuracy: 1.0, susceptibility: 0.0, noise: p },
            sweep_seed.wrapping_add(1000 + idx as u64),
        );
        cr_plan.n_baseline_samples = m_samples;
        let cr_runner = Runner::new(cr_plan.clone())?;
        cr_runner.run_consistency(&items, &mut store)?;
        let transcripts = store.consistency_transcripts(&cr_plan.run_id);
        let mean_cr = crate::metrics::average_consistency_rate(&transcripts)
            .map_err(|e| PipelineError::InvalidPlan(e.to_string()))?;

        points.push(SweepPoint {
            susceptibility: p,
            noise: p,
            mr_true_to_false: mr,
            mean_cr,
        });
    }
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter_map(|pt| pt.mr_true_to_false.map(|mr| (mr, pt.mean_cr)))
        .collect();
    let xs: Vec<f64> = usable.iter().map(|(x, _)| *x).collect();
    let ys: Vec<f64> = usable.iter().map(|(_, y)| *y).collect();
    Ok(SweepReport {
        n_items,
        m_samples,
        points,
        spearman: spearman(&xs, &ys),
    })
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    pearson(&rx, &ry)
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // 1-based average rank across the tie group.
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = rank;
        }
        i = j + 1;
    }
    out
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx).powi(2);
        vy += (y - my).powi(2);
    }
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}
