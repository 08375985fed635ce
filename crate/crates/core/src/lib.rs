//! Online convex optimization control of an unknown linear time-invariant
//! system, driven by one recorded input-output trajectory.
//!
//! The controller combines a data-based predictor, an online gradient step on
//! the current cost and a data-based steady-state projection, then steers the
//! predicted trajectory to the new steady state with one linear solve per step.

pub mod controller;
pub mod costs;
pub mod equilibria;
pub mod error;
pub mod hankel;
pub mod harness;
pub mod lti;
pub mod numerics;
pub mod regret;

pub use controller::{Controller, ControllerConfig, DataMatrices, StepDiagnostics, Tolerances, WeightSpec};
pub use costs::{quadratic_tracking, CostSchedule, CurvatureParams, QuadraticTracking, StageCost};
pub use error::{Error, Result};
pub use hankel::{HankelBlock, Trajectory};
pub use harness::{ExperimentConfig, NoiseCase, Plant};
pub use lti::{LtiSystem, RandomSystemSpec, SystemSpec};
pub use numerics::RankTolerance;
pub use regret::RegretReport;
