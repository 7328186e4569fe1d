//! Articulated and soft-tissue avatar dynamics. Every model advances in
//! time by minimizing a backward-Euler objective over its degrees of
//! freedom with a regularized Newton solver.

pub mod avatar;
pub mod benchmark;
pub mod body;
pub mod contact;
pub mod error;
pub mod fem;
pub mod kinematics;
pub mod math;
pub mod mocap;
pub mod scene;
pub mod rom;
pub mod sim;
pub mod skeleton;
pub mod sparse;
pub mod validation;

pub use error::{Error, Result};
