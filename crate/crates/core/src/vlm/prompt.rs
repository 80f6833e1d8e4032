use serde::Serialize;

use super::VlmError;
use crate::state::ProprioFrame;

/// The literal phase cycle every rendered prompt must contain.
pub const CYCLE_STRING: &str = "pre-contact → grasping → post-contact";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskType {
    A,
    B,
    C,
    D,
}

impl TaskType {
    fn instruction(self) -> &'static str {
        match self {
            TaskType::A => {
                "[Task Type A]: Physical Interaction Phase Identification\n\
                 Segment physical interaction phases based on signals like object contact, grasping, placing, etc."
            }
            TaskType::B => {
                "[Task Type B]: Language Instruction Task Phase Analysis\n\
                 Segment the sequence of sub-tasks based on robot actions performed as per language instructions (e.g., \"open drawer and place cup\")."
            }
            TaskType::C => {
                "[Task Type C]: Anomaly Detection & Phase Re-labeling\n\
                 Detect any failed or interrupted phases and re-label the task phases accordingly."
            }
            TaskType::D => {
                "[Task Type D]: Multi-Modal Cooperative Understanding\n\
                 Identify structured semantic phases based on image + action/sensor data for task progress."
            }
        }
    }
}

impl std::str::FromStr for TaskType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(TaskType::A),
            "B" => Ok(TaskType::B),
            "C" => Ok(TaskType::C),
            "D" => Ok(TaskType::D),
            other => Err(format!("unknown task type `{other}` (expected A, B, C or D)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensorRecord {
    pub gripper_state: &'static str,
    pub joint_velocity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimestepRecord {
    pub t: u32,
    pub obs: String,
    pub action: String,
    pub event: String,
    pub sensor: SensorRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptDocument {
    pub text: String,
    pub timestep_records: Vec<TimestepRecord>,
}

const OBJECTIVE: &str = "Task Objective:\n\
Please review a time-ordered sequence of data and identify the key phases or sub-tasks within it. \
The task should be segmented into the following repeating phases: `pre-contact`, `grasping`, `post-contact`. \
Continue identifying and segmenting the phases in this sequence \
(pre-contact → grasping → post-contact → pre-contact → grasping → post-contact...) \
until the entire task is completed.";

const INPUT_FORMAT: &str = "Input Format Explanation:\n\
You will receive a sequence of data with multiple time steps. Each time step will contain the following fields \
(which can be omitted or replaced as per the actual task):\n\
[\n  {\n    \"t\": 0,\n    \"obs\": \"observation at timestep 0\",\n    \"action\": \"action taken at timestep 0\",\n    \
\"event\": \"optional event log\",\n    \"sensor\": {\"gripper_state\": ..., \"joint_velocity\": ..., ...}\n  },\n  ...\n]";

const OUTPUT_FORMAT: &str = "Output Format Requirements:\n\
Please return the identified phases in JSON format. Each phase should contain the following fields:\n\
[\n  {\n    \"stage\": \"name of the stage (e.g., pre-contact, grasping, post-contact)\",\n    \
\"start\": start_timestep,\n    \"end\": end_timestep,\n    \"reason\": \"brief reason for identifying this segment\"\n  },\n  ...\n]\n\
Please ensure:\n\
- All phases are continuous and non-overlapping.\n\
- Each phase boundary is determined based on input data (e.g., changes in gripper state, joint velocity, action intent, or state transitions).\n\
- The sequence of phases must repeat in the following order until the entire task is completed: \
`pre-contact → grasping → post-contact → pre-contact → grasping → post-contact ...`";

/// Rounds to 6 decimals so the rendered text does not depend on float noise.
fn round6(x: f64) -> f64 {
    let r = (x * 1e6).round() / 1e6;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn record(frame: &ProprioFrame, previous_open: bool) -> TimestepRecord {
    let p = frame.ee_pose.translation();
    let action = if frame.gripper_open { "gripper open" } else { "gripper close" };
    let event = match (previous_open, frame.gripper_open) {
        (true, false) => "gripper close command",
        (false, true) => "gripper open command",
        _ => "",
    };
    TimestepRecord {
        t: frame.timestep,
        obs: format!(
            "end-effector at ({:.4}, {:.4}, {:.4})",
            round6(p.x),
            round6(p.y),
            round6(p.z)
        ),
        action: action.to_string(),
        event: event.to_string(),
        sensor: SensorRecord {
            gripper_state: if frame.gripper_open { "open" } else { "closed" },
            joint_velocity: round6(frame.max_joint_speed()),
        },
    }
}

/// Renders the phase-identification prompt for a trajectory.
pub fn render_prompt(frames: &[ProprioFrame], task_type: TaskType) -> Result<PromptDocument, VlmError> {
    if frames.is_empty() {
        return Err(VlmError::EmptyTrajectory);
    }
    let mut prev_open = frames[0].gripper_open;
    let records: Vec<TimestepRecord> = frames
        .iter()
        .map(|f| {
            let r = record(f, prev_open);
            prev_open = f.gripper_open;
            r
        })
        .collect();
    let data = serde_json::to_string_pretty(&records).expect("records serialize");

    let text = format!(
        "{OBJECTIVE}\n\n{INPUT_FORMAT}\n\n{OUTPUT_FORMAT}\n\nTask Instructions:\n{}\n\nData:\n{data}\n",
        task_type.instruction()
    );
    Ok(PromptDocument {
        text,
        timestep_records: records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::Pose;

    fn frames(n: u32) -> Vec<ProprioFrame> {
        (0..n)
            .map(|t| ProprioFrame {
                timestep: t,
                gripper_open: t == 0,
                joint_velocities: [0.1 * t as f64, -0.3, 0.0, 0.0, 0.0, 0.0, 0.0],
                ee_pose: Pose::from_xyz_yaw(0.1 * t as f64, 0.0, 0.3, 0.0),
            })
            .collect()
    }

    #[test]
    fn contains_cycle_and_task_tag() {
        let doc = render_prompt(&frames(2), TaskType::A).unwrap();
        assert!(doc.text.contains(CYCLE_STRING));
        assert!(doc.text.contains("[Task Type A]"));
        assert!(doc.text.contains("Output Format Requirements"));
        assert_eq!(doc.timestep_records.len(), 2);
        assert_eq!(doc.timestep_records[1].event, "gripper close command");
        assert_eq!(doc.timestep_records[1].sensor.joint_velocity, 0.3);
    }

    #[test]
    fn deterministic_and_rejects_empty() {
        let a = render_prompt(&frames(5), TaskType::C).unwrap();
        let b = render_prompt(&frames(5), TaskType::C).unwrap();
        assert_eq!(a.text.as_bytes(), b.text.as_bytes());
        assert!(a.text.contains("[Task Type C]"));
        assert!(matches!(render_prompt(&[], TaskType::A), Err(VlmError::EmptyTrajectory)));
    }
}
