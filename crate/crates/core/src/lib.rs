//! Gust-aware autonomous docking of a multi-rotor UAV on a blimp.
//!
//! The crate bundles a surrogate blimp plant and dataset pipeline, a
//! temporal convolutional predictor of the blimp's gust response, a gust
//! detector, an ADMM quadratic-program solver, the trajectory MPC with
//! corridor-enhanced tangential hull (CETH) obstacle avoidance, a docking
//! port bias estimator and the closed-loop evaluation harness.

pub mod detect;
pub mod ekf;
pub mod ceth;
pub mod error;
pub mod gust;
pub mod harness;
pub mod mpc;
pub mod plant;
pub mod qp;
pub mod tcn;
pub mod world;

pub use error::{Error, Result};
pub use world::Vec3;
