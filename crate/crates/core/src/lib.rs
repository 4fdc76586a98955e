//! Planar bipedal locomotion stack.
//!
//! The crate simulates planar bipeds (the five-link `rabbit` and seven-link
//! `walker2d`) as hybrid rigid-body systems, plans footsteps with a reduced
//! pendulum model of the angular momentum about the stance contact, tracks
//! task-space trajectories with feedback-linearization or inverse-dynamics QP
//! controllers, and trains a high-level footstep policy with PPO.

pub mod alip;
pub mod env;
pub mod gait;
pub mod ppo;
pub mod rigid_body;
pub mod tracking;
