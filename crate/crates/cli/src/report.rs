use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use oneshot_core::sim::{MetricsReport, SuccessTable, TrialResult};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// One row of a results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model: String,
    pub task: String,
    pub level: u8,
    pub seed: u64,
    pub trial: u32,
    pub success: f64,
    pub phases_completed: usize,
}

impl From<&TrialResult> for ResultRow {
    fn from(r: &TrialResult) -> Self {
        ResultRow {
            model: r.model.clone(),
            task: r.task_id.clone(),
            level: r.level,
            seed: r.seed,
            trial: r.trial,
            success: if r.success { 1.0 } else { 0.0 },
            phases_completed: r.phases_completed,
        }
    }
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(CSV_HEADER.split(',')).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.write_record([
            r.model.clone(),
            r.task.clone(),
            r.level.to_string(),
            r.seed.to_string(),
            r.trial.to_string(),
            r.success.to_string(),
            r.phases_completed.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub const CSV_HEADER: &str = "model,task,level,seed,trial,success,phases_completed";

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => CliError::io(path, io),
            _ => unreachable!(),
        }
    } else {
        CliError::Format { path: path.display().to_string(), msg: e.to_string() }
    }
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

/// Success rate per model, task and seed.
pub fn tables_from_rows(rows: &[ResultRow]) -> Vec<SuccessTable> {
    let mut acc: BTreeMap<&str, BTreeMap<(&str, u64), (f64, usize)>> = BTreeMap::new();
    for r in rows {
        let cell = acc.entry(&r.model).or_default().entry((&r.task, r.seed)).or_insert((0.0, 0));
        cell.0 += r.success;
        cell.1 += 1;
    }
    acc.into_iter()
        .map(|(model, cells)| {
            let mut t = SuccessTable::new(model);
            for ((task, seed), (sum, n)) in cells {
                t.insert(task, seed, sum / n as f64);
            }
            t
        })
        .collect()
}

fn pct(v: f64) -> String {
    format!("{:.1}", 100.0 * v)
}

pub fn markdown(report: &MetricsReport) -> String {
    let mut out = String::from("| Model |");
    for t in &report.tasks {
        let _ = write!(out, " {t} |");
    }
    out.push_str(" Avg. Success | Avg. Rank |\n|---|");
    out.push_str(&"---|".repeat(report.tasks.len() + 2));
    out.push('\n');
    for m in &report.models {
        let _ = write!(out, "| {} |", m.model);
        for t in &report.tasks {
            let s = &m.per_task[t];
            let _ = write!(out, " {} ± {} ({}) |", pct(s.mean), pct(s.std), s.rank);
        }
        let _ = writeln!(out, " {} | {:.2} |", pct(m.average_success), m.average_rank);
    }
    out
}

pub fn csv(report: &MetricsReport) -> String {
    let mut out = String::from("model,task,mean,std,rank\n");
    for m in &report.models {
        for t in &report.tasks {
            let s = &m.per_task[t];
            let _ = writeln!(out, "{},{},{},{},{}", m.model, t, s.mean, s.std, s.rank);
        }
        let _ = writeln!(out, "{},average,{},,{}", m.model, m.average_success, m.average_rank);
    }
    out
}
