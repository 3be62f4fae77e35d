//! Self-contained dense solvers.
//!
//! [`solve_lp`] is a homogeneous self-dual primal-dual interior-point method
//! with Mehrotra predictor-corrector steps. It returns certificates for
//! infeasible and unbounded problems. [`solve_qp`] is an operator-splitting
//! (ADMM) method with over-relaxation, adaptive penalty and an active-set
//! polishing step.

mod fd;
mod lp;
mod qp;

pub use fd::finite_diff_grad;
pub use lp::{solve_lp, solve_lp_with, LpProblem, LpSettings};
pub use qp::{kkt_residual, solve_qp, solve_qp_with, QpProblem, QpSettings, QpWarmStart};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
}

/// Outcome of an LP or QP solve.
///
/// For `Infeasible` the `dual` field holds the Farkas certificate, for
/// `Unbounded` the `solution` field holds the improving ray.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub solution: DVector<f64>,
    pub objective: f64,
    /// Multipliers of the inequality constraints (nonnegative).
    pub dual: DVector<f64>,
    /// Multipliers of the equality constraints, empty when there are none.
    pub dual_eq: DVector<f64>,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    pub wall_time: f64,
}

impl SolveReport {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    /// Equality of everything except the wall-clock measurement.
    pub fn same_result(&self, other: &SolveReport) -> bool {
        self.status == other.status
            && self.solution == other.solution
            && self.objective.to_bits() == other.objective.to_bits()
            && self.dual == other.dual
            && self.dual_eq == other.dual_eq
            && self.primal_residual.to_bits() == other.primal_residual.to_bits()
            && self.dual_residual.to_bits() == other.dual_residual.to_bits()
            && self.iterations == other.iterations
    }
}
