use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::expert::Demonstration;
use super::SimError;
use crate::se3::Pose;
use crate::state::{ProprioFrame, JOINT_COUNT};

/// One line of a demonstration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoFileFrame {
    pub t: u32,
    pub gripper_open: bool,
    pub joint_velocities: [f64; JOINT_COUNT],
    pub ee_pose: Vec<f64>,
    pub attached: Option<u32>,
    #[serde(default)]
    pub allow_collision: bool,
    /// `[x, y, z, instance, class]` rows.
    pub points: Vec<[f64; 5]>,
}

impl DemoFileFrame {
    pub fn to_proprio(&self) -> Result<ProprioFrame, SimError> {
        let ee_pose = Pose::from_row_major(&self.ee_pose)
            .map_err(|e| SimError::DemoFormat { line: self.t as usize + 1, msg: e.to_string() })?;
        Ok(ProprioFrame {
            timestep: self.t,
            gripper_open: self.gripper_open,
            joint_velocities: self.joint_velocities,
            ee_pose,
        })
    }
}

pub fn write_demo_jsonl(demo: &Demonstration, mut out: impl Write) -> std::io::Result<()> {
    let sampler = demo.sampler();
    for f in &demo.frames {
        let cloud = sampler.cloud(&f.object_poses);
        let points = cloud
            .points()
            .iter()
            .zip(cloud.instance_ids().iter().zip(cloud.class_ids()))
            .map(|(p, (&i, &c))| [p.x, p.y, p.z, i as f64, c as f64])
            .collect();
        let line = DemoFileFrame {
            t: f.proprio.timestep,
            gripper_open: f.proprio.gripper_open,
            joint_velocities: f.proprio.joint_velocities,
            ee_pose: f.proprio.ee_pose.to_row_major().to_vec(),
            attached: f.attached,
            allow_collision: f.allow_collision,
            points,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_demo_jsonl(input: impl BufRead) -> Result<Vec<DemoFileFrame>, SimError> {
    let mut frames = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| SimError::DemoFormat { line: n + 1, msg: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let frame: DemoFileFrame =
            serde_json::from_str(&line).map_err(|e| SimError::DemoFormat { line: n + 1, msg: e.to_string() })?;
        if frame.ee_pose.len() != 16 {
            return Err(SimError::DemoFormat { line: n + 1, msg: format!("ee_pose has {} values", frame.ee_pose.len()) });
        }
        frames.push(frame);
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_task, scripted_expert, ExpertConfig};

    #[test]
    fn demo_file_round_trips_proprioception() {
        let task = generate_task(1, 1).unwrap();
        let demo = scripted_expert(&task, &ExpertConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_demo_jsonl(&demo, &mut buf).unwrap();
        let frames = read_demo_jsonl(buf.as_slice()).unwrap();
        assert_eq!(frames.len(), demo.len());
        for (f, d) in frames.iter().zip(&demo.frames) {
            let p = f.to_proprio().unwrap();
            assert_eq!(p.timestep, d.proprio.timestep);
            assert_eq!(p.joint_velocities, d.proprio.joint_velocities);
            assert!(p.ee_pose.translation_distance(&d.proprio.ee_pose) < 1e-12);
            assert_eq!(f.points.len(), demo.sampler().point_count());
        }
        let mut again = Vec::new();
        write_demo_jsonl(&demo, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn bad_lines_report_their_position() {
        let err = read_demo_jsonl("\n{\"t\":0}\n".as_bytes()).unwrap_err();
        assert!(matches!(err, SimError::DemoFormat { line: 2, .. }));
    }
}
