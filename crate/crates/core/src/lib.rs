//! One-shot imitation of long-horizon prehensile manipulation.
//!
//! A single demonstration is split into pre-contact / grasping / post-contact
//! phases, each phase is tied to an invariant region of the scene, and at
//! execution time that region is matched into the live point cloud to map the
//! demonstrated end-effector pose onto the new layout. Motions between the
//! predicted poses come from an RRT-Connect planner. The [`sim`] module
//! provides a synthetic tabletop benchmark to run the loop end to end.

pub mod cloud;
pub mod config;
pub mod invariant;
pub mod matcher;
pub mod planner;
pub mod se3;
pub mod segmenter;
pub mod sim;
pub mod state;
pub mod vlm;

pub use se3::{Action, Pose};
