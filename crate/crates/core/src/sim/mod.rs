//! Synthetic tabletop benchmark: task generation, scripted expert, rollout
//! executor and metrics.

mod expert;
mod io;
mod metrics;
mod rollout;
mod scene;
mod task;

pub use expert::{scripted_expert, DemoFrame, Demonstration, ExpertConfig, JOINT_MAP};
pub use io::{read_demo_jsonl, write_demo_jsonl, DemoFileFrame};
pub use metrics::{compute_metrics, success_tables, MetricsReport, ModelSummary, SuccessTable, TaskStat};
pub use rollout::{
    execute_rollout, PipelineConfig, PreparedDemo, RegionMode, RolloutError, TrialOutcome, TrialResult,
};
pub use scene::{SceneConfig, SceneSampler};
pub use task::{
    class, generate_task, perturb_layout, BoxShape, Goal, ObjectKind, ObjectSpec, Perturbation, TaskSpec,
    WORKSPACE_MAX, WORKSPACE_MIN,
};

use thiserror::Error;

use crate::planner::PlanError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("level must be 1, 2 or 3, got {0}")]
    InvalidLevel(u8),
    #[error("could not place objects without overlap after {0} attempts")]
    SpawnFailed(usize),
    #[error("expert could not plan leg {leg}: {source}")]
    ExpertPlanningFailed { leg: usize, source: PlanError },
    #[error("model grids differ: {0}")]
    GridMismatch(String),
    #[error("no results")]
    NoResults,
    #[error("malformed demonstration file at line {line}: {msg}")]
    DemoFormat { line: usize, msg: String },
}
