//! Reactive whole-body control of a mobile manipulator in scenes represented
//! as Gaussian splats.
//!
//! The crate is organised bottom-up:
//!
//! * [`scene`]: splat scenes (PLY I/O, spatial culling, synthetic generation,
//!   floater injection) and the analytic primitive scenes used as ground truth.
//! * [`kinematics`]: differential-drive base with two virtual joints plus a
//!   serial arm, collision spheres and manipulability.
//! * [`distance`]: the sphere-to-ellipsoid backend, the median-depth
//!   rasterisation backend and the ground-truth SDF backend.
//! * [`qp`]: a dense dual active-set QP solver.
//! * [`controller`]: assembly of the per-step velocity QP.
//! * [`sim`], [`metrics`], [`bench`]: trial simulation and the benchmark harness.

pub mod bench;
pub mod controller;
pub mod distance;
pub mod error;
pub mod kinematics;
pub mod metrics;
pub mod pose;
pub mod qp;
pub mod scene;
pub mod sim;

pub use error::{Error, Result};
