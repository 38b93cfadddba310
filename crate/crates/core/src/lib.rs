//! Disturbance predictive control for a quadruped carrying a robotic arm.
//!
//! The stack has three layers:
//!
//! * a low-level controller that distributes stance forces with a QP whose
//!   dynamics include an estimated arm wrench ([`controller`], [`qp`],
//!   [`dynamics`]);
//! * a latent dynamic adapter, an encoder/decoder forward model that squeezes
//!   the arm's influence on the trunk into a 2-D latent state ([`adapter`]);
//! * a soft actor-critic estimator mapping body state and latent state to the
//!   disturbance wrench ([`estimator`]).
//!
//! [`sim`] provides a trunk-centric simulator where the only model mismatch
//! is the arm wrench, and [`harness`] wires the pipeline for the CLI.

pub mod adapter;
pub mod controller;
pub mod dynamics;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod nn;
pub mod qp;
pub mod sim;
pub mod state;

pub use error::{Error, Result};
pub use state::{
    ArmCommand, ArmState, BodyState, DisturbanceLimits, DisturbanceParams, LatentState, RobotParams, TrajectoryPoint,
};
