//! Compliant quadruped locomotion control stack with a deterministic
//! rigid-body simulation harness.
//!
//! The crate is organized around the control pipeline:
//!
//! * [`model`] — kinematics, Jacobians, and dynamics terms of the 18-DOF robot
//! * [`estimation`] — signal filtering and proprioceptive external-wrench estimation
//! * [`base_planner`] — admittance + CBF base motion generation
//! * [`gait`] — gait scheduling, TAPS stability margin, adaptation, footsteps
//! * [`mpc`] — reduced-order convex MPC over contact forces
//! * [`reactive`] — high-rate contact-force QP and joint torque mapping
//! * [`simulator`] — deterministic physics, latency, and disturbance models
//! * [`harness`] — scenario runner, presets, metrics, and CSV logging
//!
//! [`refqp`] hosts slow, independent reference solvers used by the test
//! suites to cross-check the production QP solvers.

pub mod base_planner;
pub mod estimation;
pub mod gait;
pub mod harness;
pub mod model;
pub mod mpc;
pub mod reactive;
pub mod refqp;
pub mod simulator;
