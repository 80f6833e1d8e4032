//! Rule-based decomposition of a demonstration into interaction phases.
//!
//! A cycle is pre-contact (open gripper, approaching), grasping (from the
//! first close command while the closed gripper stays still) and post-contact
//! (closed gripper moving, through the frame where it reopens). Cycles repeat
//! until the frames run out; trailing open frames after the last release are
//! absorbed into the final post-contact phase so every frame is covered.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::state::ProprioFrame;

/// Default joint speed (rad/s) below which the arm counts as stopped.
pub const DEFAULT_V_ZERO: f64 = 1e-3;

/// Default macro-step stride in frames.
pub const DEFAULT_STRIDE: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PhaseKind {
    PreContact,
    Grasping,
    PostContact,
}

impl PhaseKind {
    /// Name used in the JSON stage schema.
    pub fn stage_name(self) -> &'static str {
        match self {
            PhaseKind::PreContact => "pre-contact",
            PhaseKind::Grasping => "grasping",
            PhaseKind::PostContact => "post-contact",
        }
    }

    pub fn from_stage_name(name: &str) -> Option<PhaseKind> {
        match name {
            "pre-contact" => Some(PhaseKind::PreContact),
            "grasping" => Some(PhaseKind::Grasping),
            "post-contact" => Some(PhaseKind::PostContact),
            _ => None,
        }
    }

    /// Kind expected at position `index` of a well-formed cycle sequence.
    pub fn at_cycle_position(index: usize) -> PhaseKind {
        match index % 3 {
            0 => PhaseKind::PreContact,
            1 => PhaseKind::Grasping,
            _ => PhaseKind::PostContact,
        }
    }
}

/// Inclusive timestep range of one phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionPhase {
    pub kind: PhaseKind,
    pub start: u32,
    pub end: u32,
}

impl InteractionPhase {
    pub fn new(kind: PhaseKind, start: u32, end: u32) -> Self {
        Self { kind, start, end }
    }

    pub fn frame_count(&self) -> u32 {
        self.end - self.start + 1
    }

    pub fn contains(&self, t: u32) -> bool {
        self.start <= t && t <= self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecompositionSource {
    RuleBased,
    Vlm,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decomposition {
    pub phases: Vec<InteractionPhase>,
    pub source: DecompositionSource,
}

impl Decomposition {
    /// Index of the phase containing timestep `t`.
    pub fn phase_index_of(&self, t: u32) -> Option<usize> {
        self.phases.iter().position(|p| p.contains(t))
    }

    /// Checks continuity and the Pre → Grasp → Post cycle order.
    pub fn is_well_formed(&self) -> bool {
        self.phases.iter().enumerate().all(|(i, p)| {
            p.start <= p.end
                && p.kind == PhaseKind::at_cycle_position(i)
                && (i == 0 || self.phases[i - 1].end + 1 == p.start)
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SegmentError {
    #[error("need at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("trajectory must start with an open gripper")]
    StartsClosed,
    #[error("timesteps must be strictly increasing (frame {0})")]
    NonMonotonicTimesteps(usize),
    #[error("gripper never closes")]
    NoGraspDetected,
    #[error("gripper closes immediately after the release at timestep {0}; no pre-contact frames")]
    EmptyPreContact(u32),
    #[error("trajectory ends with the gripper closed")]
    TruncatedCycle { partial: Decomposition },
}

/// Splits frames into pre-contact / grasping / post-contact phases.
pub fn segment_rule_based(
    frames: &[ProprioFrame],
    v_zero_threshold: f64,
) -> Result<Decomposition, SegmentError> {
    let n = frames.len();
    if n < 2 {
        return Err(SegmentError::TooFewFrames(n));
    }
    if !frames[0].gripper_open {
        return Err(SegmentError::StartsClosed);
    }
    if let Some(i) = (1..n).find(|&i| frames[i].timestep <= frames[i - 1].timestep) {
        return Err(SegmentError::NonMonotonicTimesteps(i));
    }

    let ts = |i: usize| frames[i].timestep;
    let still = |i: usize| frames[i].max_joint_speed() < v_zero_threshold;
    let mut phases = Vec::new();
    let mut cursor = 0usize;

    while cursor < n {
        let Some(close) = (cursor..n).find(|&i| !frames[i].gripper_open) else {
            match phases.last_mut() {
                None => return Err(SegmentError::NoGraspDetected),
                Some(InteractionPhase { end, .. }) => *end = ts(n - 1),
            }
            break;
        };
        if close == cursor {
            return Err(SegmentError::EmptyPreContact(ts(cursor)));
        }
        phases.push(InteractionPhase::new(PhaseKind::PreContact, ts(cursor), ts(close - 1)));

        // grasping lasts while the gripper stays closed and the arm stays still
        let mut grasp_end = close;
        while grasp_end + 1 < n && !frames[grasp_end + 1].gripper_open && still(grasp_end + 1) {
            grasp_end += 1;
        }
        phases.push(InteractionPhase::new(PhaseKind::Grasping, ts(close), ts(grasp_end)));

        if grasp_end + 1 >= n {
            return Err(SegmentError::TruncatedCycle {
                partial: Decomposition {
                    phases,
                    source: DecompositionSource::RuleBased,
                },
            });
        }
        let post_start = grasp_end + 1;
        match (post_start..n).find(|&i| frames[i].gripper_open) {
            Some(release) => {
                phases.push(InteractionPhase::new(PhaseKind::PostContact, ts(post_start), ts(release)));
                cursor = release + 1;
            }
            None => {
                phases.push(InteractionPhase::new(PhaseKind::PostContact, ts(post_start), ts(n - 1)));
                return Err(SegmentError::TruncatedCycle {
                    partial: Decomposition {
                        phases,
                        source: DecompositionSource::RuleBased,
                    },
                });
            }
        }
    }

    Ok(Decomposition {
        phases,
        source: DecompositionSource::RuleBased,
    })
}

/// Keyframes of a phase: every `stride`-th timestep from the start, plus the
/// end timestep even when it falls closer than `stride` to the previous one.
pub fn sample_macro_steps(phase: &InteractionPhase, stride: u32) -> Vec<u32> {
    let stride = stride.max(1);
    let mut steps: Vec<u32> = (phase.start..=phase.end).step_by(stride as usize).collect();
    if steps.last() != Some(&phase.end) {
        steps.push(phase.end);
    }
    steps
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Horizon {
    Short,
    Long { level: u8, canonical: bool },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("decomposition has no phases")]
pub struct EmptyDecomposition;

/// Short horizon for at most three phases; long-horizon levels 1/2/3 for
/// 6/9/12 phases, other counts snap to the nearest level and are flagged
/// non-canonical.
pub fn classify_horizon(d: &Decomposition) -> Result<Horizon, EmptyDecomposition> {
    let count = d.phases.len();
    if count == 0 {
        return Err(EmptyDecomposition);
    }
    if count <= 3 {
        return Ok(Horizon::Short);
    }
    let (level, canonical_count) = [(1u8, 6usize), (2, 9), (3, 12)]
        .into_iter()
        .min_by_key(|&(_, c)| c.abs_diff(count))
        .expect("non-empty level table");
    Ok(Horizon::Long {
        level,
        canonical: canonical_count == count,
    })
}
