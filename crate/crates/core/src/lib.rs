//! Learning explicit MPC policies from the interior of the feasible set.
//!
//! The crate is organized bottom-up:
//!
//! * [`optim`]: dense LP (homogeneous interior point) and QP (ADMM) solvers.
//! * [`polytope`]: halfspace polytopes, gauge functions and gauge maps,
//!   constraint tightening and robust invariant sets.
//! * [`mpc`]: linear systems, the condensed finite-horizon problem and the
//!   online MPC oracle.
//! * [`phase1`]: strictly feasible points of the MPC feasible set.
//! * [`gauge_policy`]: the safe neural policy built from a gauge map.
//! * [`learner`]: MLP, Adam, training loop and the penalty/projection
//!   baselines.
//! * [`evalsim`]: closed-loop simulation and benchmarking.
//! * [`config`]: system definition files.

pub mod config;
pub mod error;
pub mod evalsim;
pub mod gauge_policy;
pub mod learner;
pub mod linalg;
pub mod mpc;
pub mod optim;
pub mod phase1;
pub mod policy;
pub mod polytope;

pub use error::{Error, Result};

pub use nalgebra::{DMatrix, DVector};
