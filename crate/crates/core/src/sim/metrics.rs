use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::rollout::TrialResult;
use super::SimError;

/// Success rate of one model per task and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessTable {
    pub model: String,
    pub per_task: BTreeMap<String, BTreeMap<u64, f64>>,
}

impl SuccessTable {
    pub fn new(model: impl Into<String>) -> Self {
        Self { model: model.into(), per_task: BTreeMap::new() }
    }

    pub fn insert(&mut self, task: impl Into<String>, seed: u64, success: f64) {
        self.per_task.entry(task.into()).or_default().insert(seed, success);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskStat {
    pub mean: f64,
    /// Population standard deviation across seeds.
    pub std: f64,
    pub rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: String,
    pub per_task: BTreeMap<String, TaskStat>,
    pub average_success: f64,
    pub average_rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tasks: Vec<String>,
    pub models: Vec<ModelSummary>,
}

impl MetricsReport {
    pub fn model(&self, name: &str) -> Option<&ModelSummary> {
        self.models.iter().find(|m| m.model == name)
    }
}

/// Groups trial results by model, task and seed into success rates.
pub fn success_tables(results: &[TrialResult]) -> Vec<SuccessTable> {
    let mut acc: BTreeMap<&str, BTreeMap<&str, BTreeMap<u64, (f64, usize)>>> = BTreeMap::new();
    for r in results {
        let cell = acc
            .entry(&r.model)
            .or_default()
            .entry(&r.task_id)
            .or_default()
            .entry(r.seed)
            .or_insert((0.0, 0));
        cell.0 += if r.success { 1.0 } else { 0.0 };
        cell.1 += 1;
    }
    acc.into_iter()
        .map(|(model, tasks)| SuccessTable {
            model: model.to_string(),
            per_task: tasks
                .into_iter()
                .map(|(t, seeds)| (t.to_string(), seeds.into_iter().map(|(s, (k, n))| (s, k / n as f64)).collect()))
                .collect(),
        })
        .collect()
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Fractional descending ranks: tied values share the mean of their positions.
pub fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = shared;
        }
        i = j + 1;
    }
    ranks
}

pub fn compute_metrics(tables: &[SuccessTable]) -> Result<MetricsReport, SimError> {
    let first = tables.first().ok_or(SimError::NoResults)?;
    if first.per_task.is_empty() {
        return Err(SimError::NoResults);
    }
    let grid = |t: &SuccessTable| -> Vec<(String, Vec<u64>)> {
        t.per_task.iter().map(|(k, s)| (k.clone(), s.keys().copied().collect())).collect()
    };
    let reference = grid(first);
    for t in &tables[1..] {
        if grid(t) != reference {
            return Err(SimError::GridMismatch(format!("`{}` and `{}` cover different task/seed grids", first.model, t.model)));
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    for t in tables {
        if !seen.insert(&t.model) {
            return Err(SimError::GridMismatch(format!("model `{}` appears twice", t.model)));
        }
    }

    let tasks: Vec<String> = first.per_task.keys().cloned().collect();
    let mut stats: Vec<BTreeMap<String, TaskStat>> = vec![BTreeMap::new(); tables.len()];
    for task in &tasks {
        let means: Vec<(f64, f64)> = tables
            .iter()
            .map(|t| mean_std(&t.per_task[task].values().copied().collect::<Vec<_>>()))
            .collect();
        let ranks = fractional_ranks(&means.iter().map(|m| m.0).collect::<Vec<_>>());
        for (m, ((mean, std), rank)) in means.into_iter().zip(ranks).enumerate() {
            stats[m].insert(task.clone(), TaskStat { mean, std, rank });
        }
    }
    let n = tasks.len() as f64;
    let models = tables
        .iter()
        .zip(stats)
        .map(|(t, per_task)| ModelSummary {
            model: t.model.clone(),
            average_success: per_task.values().map(|s| s.mean).sum::<f64>() / n,
            average_rank: per_task.values().map(|s| s.rank).sum::<f64>() / n,
            per_task,
        })
        .collect();
    Ok(MetricsReport { tasks, models })
}
