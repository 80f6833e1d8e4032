//! Per-frame robot and scene state shared by the segmenter, the invariant
//! region oracle and the simulator.

use serde::{Deserialize, Serialize};

use crate::cloud::LabeledCloud;
use crate::se3::Pose;

pub const JOINT_COUNT: usize = 7;

/// Proprioceptive sample of one trajectory frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProprioFrame {
    pub timestep: u32,
    pub gripper_open: bool,
    pub joint_velocities: [f64; JOINT_COUNT],
    pub ee_pose: Pose,
}

impl ProprioFrame {
    /// Largest absolute joint velocity.
    pub fn max_joint_speed(&self) -> f64 {
        self.joint_velocities
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
    }
}

/// One observed frame: labeled cloud, proprioception and the grasped instance.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryState {
    pub cloud: LabeledCloud,
    pub proprio: ProprioFrame,
    pub attached_instance: Option<u32>,
}
