//! Benchmark configuration loaded from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::PlanConfig;
use crate::sim::{ExpertConfig, Perturbation, PipelineConfig, RegionMode, SceneConfig};
use crate::vlm::{EndpointConfig, TaskType};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid TOML: {0}")]
    Parse(String),
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field, reason: reason.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSection {
    pub levels: Vec<u8>,
    pub seeds: Vec<u64>,
    /// Trials per seed.
    pub trials: u32,
    pub perturbation_m: f64,
    pub perturbation_rad: f64,
    /// Models evaluated side by side; empty means the pipeline mode alone.
    pub models: Vec<RegionMode>,
    pub output_dir: String,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        Self {
            levels: vec![1, 2, 3],
            seeds: (0..5).collect(),
            trials: 25,
            perturbation_m: 0.03,
            perturbation_rad: 0.1,
            models: Vec::new(),
            output_dir: "results".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VlmSection {
    #[serde(flatten)]
    pub endpoint: EndpointConfig,
    pub task_type: String,
    /// Repair single-frame gaps between consecutive phases.
    pub lenient: bool,
}

impl Default for VlmSection {
    fn default() -> Self {
        Self { endpoint: EndpointConfig::default(), task_type: "A".into(), lenient: false }
    }
}

impl VlmSection {
    pub fn task_type(&self) -> Result<TaskType, ConfigError> {
        self.task_type.parse().map_err(|e: String| invalid("vlm.task_type", e))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub benchmark: BenchmarkSection,
    pub pipeline: PipelineConfig,
    pub planner: PlanConfig,
    pub scene: SceneConfig,
    pub vlm: VlmSection,
}

impl BenchmarkConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: BenchmarkConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn models(&self) -> Vec<RegionMode> {
        if self.benchmark.models.is_empty() {
            vec![self.pipeline.mode]
        } else {
            self.benchmark.models.clone()
        }
    }

    pub fn perturbation(&self) -> Perturbation {
        Perturbation { translation: self.benchmark.perturbation_m, rotation: self.benchmark.perturbation_rad }
    }

    pub fn expert(&self) -> ExpertConfig {
        ExpertConfig { scene: self.scene.clone(), planner: self.planner.clone(), ..ExpertConfig::default() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let b = &self.benchmark;
        if b.levels.is_empty() || b.levels.iter().any(|l| !(1..=3).contains(l)) {
            return Err(invalid("benchmark.levels", "must be a non-empty subset of 1, 2, 3"));
        }
        if b.seeds.is_empty() {
            return Err(invalid("benchmark.seeds", "must not be empty"));
        }
        if b.trials == 0 {
            return Err(invalid("benchmark.trials", "must be positive"));
        }
        for (field, v) in [("benchmark.perturbation_m", b.perturbation_m), ("benchmark.perturbation_rad", b.perturbation_rad)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(field, "must be finite and nonnegative"));
            }
        }
        let p = &self.pipeline;
        if !(p.temperature > 0.0 && p.temperature.is_finite()) {
            return Err(invalid("pipeline.temperature", "must be positive"));
        }
        if !(0.0..=1.0).contains(&p.match_threshold) {
            return Err(invalid("pipeline.match_threshold", "must lie in [0, 1]"));
        }
        if !(p.epsilon > 0.0 && p.epsilon.is_finite()) {
            return Err(invalid("pipeline.epsilon", "must be positive"));
        }
        if p.stride == 0 {
            return Err(invalid("pipeline.stride", "must be positive"));
        }
        if !(p.v_zero_threshold > 0.0 && p.v_zero_threshold.is_finite()) {
            return Err(invalid("pipeline.v_zero_threshold", "must be positive"));
        }
        if p.descriptor_k < 4 {
            return Err(invalid("pipeline.descriptor_k", "must be at least 4"));
        }
        if !(p.descriptor_scale > 0.0 && p.descriptor_scale.is_finite()) {
            return Err(invalid("pipeline.descriptor_scale", "must be positive"));
        }
        if !(p.gripper_weight >= 0.0 && p.gripper_weight.is_finite()) {
            return Err(invalid("pipeline.gripper_weight", "must be nonnegative"));
        }
        self.planner.validate().map_err(|e| invalid("planner", e.to_string()))?;
        let s = &self.scene;
        if !(s.point_density > 0.0 && s.point_density.is_finite()) {
            return Err(invalid("scene.point_density", "must be positive"));
        }
        if !(s.noise_sigma >= 0.0 && s.noise_sigma.is_finite()) {
            return Err(invalid("scene.noise_sigma", "must be nonnegative"));
        }
        if !(s.z_safe > 0.15 && s.z_safe < 0.55) {
            return Err(invalid("scene.z_safe", "must lie in (0.15, 0.55)"));
        }
        if s.gripper_half_extents.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(invalid("scene.gripper_half_extents", "must be positive"));
        }
        self.vlm.task_type()?;
        if !(self.vlm.endpoint.timeout_secs > 0.0) {
            return Err(invalid("vlm.timeout_secs", "must be positive"));
        }
        Ok(())
    }
}
