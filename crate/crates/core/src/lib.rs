//! Trajectory tracking for tracked vehicles by feedback linearization, with an
//! optional conditionally independent Gaussian-process inverse model learned
//! from closed-loop rollouts.
//!
//! Module map:
//!
//! * [`kinematics`]: first/second order forward and inverse models about the
//!   offset point `x_B`.
//! * [`terrain3d`]: tilted-plane geometry and slip-afflicted track kinematics
//!   used as the ground-truth plant.
//! * [`control`]: feedback-linearization laws, gain/pole validation and the
//!   inverse-model slot.
//! * [`gp`]: SE-ARD Gaussian processes, exact inference and marginal
//!   likelihood maximization.
//! * [`sim`]: reference trajectories, plants, rollouts, dataset extraction.
//! * [`harness`]: experiment configuration and the CLI subcommands.

// `!(x > 0.0)` checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod error;
pub mod gp;
pub mod harness;
pub mod kinematics;
pub mod par;
pub mod sim;
pub mod terrain3d;

pub use error::{Error, Result};
