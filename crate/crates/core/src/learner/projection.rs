//! Projection baseline: raw outputs projected onto `F(x₀)` by a QP, with
//! gradients from the KKT system at the active set.

use std::sync::atomic::{AtomicBool, Ordering};

use nalgebra::{DMatrix, DVector};

use crate::mpc::CondensedMpc;
use crate::optim::{solve_qp_with, QpProblem, QpSettings, SolveStatus};
use crate::{Error, Result};

/// Rows with slack at or below this and a positive multiplier count as
/// active.
pub const ACTIVE_TOL: f64 = 1e-7;
/// Relative size below which a multiplier counts as zero.
const DUAL_TOL: f64 = 1e-9;

static WARNED: AtomicBool = AtomicBool::new(false);

#[derive(Debug, Clone)]
pub struct ProjectionHead {
    pub settings: QpSettings,
}

impl Default for ProjectionHead {
    fn default() -> Self {
        Self {
            settings: QpSettings {
                tol: 1e-9,
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProjectionCache {
    /// Projector onto the null space of the active rows; `None` when no row
    /// is active.
    null_projector: Option<DMatrix<f64>>,
    pub active: Vec<usize>,
}

impl ProjectionHead {
    pub fn forward(
        &self,
        mpc: &CondensedMpc,
        x0: &DVector<f64>,
        raw: &DVector<f64>,
    ) -> Result<(DVector<f64>, ProjectionCache)> {
        let a = mpc.constraint_matrix();
        let b = mpc.constraint_rhs(x0);
        if (a * raw - &b).max() <= 0.0 {
            return Ok((
                raw.clone(),
                ProjectionCache {
                    null_projector: None,
                    active: Vec::new(),
                },
            ));
        }
        let qp = QpProblem::projection(raw, a.clone(), b.clone())?;
        let r = solve_qp_with(&qp, &self.settings, None);
        if r.status != SolveStatus::Optimal {
            return Err(Error::solver(r.status, "projection layer"));
        }
        let u = r.solution;
        let slack = &b - a * &u;
        // Rows that touch u with a zero multiplier do not bend the map.
        let dual_floor = DUAL_TOL * r.dual.amax().max(1.0);
        let active: Vec<usize> = (0..slack.len())
            .filter(|&i| slack[i] <= ACTIVE_TOL && r.dual[i] > dual_floor)
            .collect();
        let null_projector = (!active.is_empty()).then(|| null_space_projector(&a.select_rows(&active)));
        Ok((u, ProjectionCache { null_projector, active }))
    }

    /// `∂L/∂v = (I − Aᵀ(AAᵀ)⁻¹A) ∂L/∂u` over the active rows `A`.
    pub fn backward(&self, cache: &ProjectionCache, upstream: &DVector<f64>) -> DVector<f64> {
        match &cache.null_projector {
            Some(p) => p * upstream,
            None => upstream.clone(),
        }
    }
}

fn null_space_projector(a: &DMatrix<f64>) -> DMatrix<f64> {
    let d = a.ncols();
    let gram = a * a.transpose();
    if let Some(chol) = gram.clone().cholesky() {
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = (diag.min(), diag.max());
        if lo > 0.0 && (lo / hi).powi(2) > 1e-12 {
            return DMatrix::identity(d, d) - a.transpose() * chol.solve(a);
        }
    }
    if !WARNED.swap(true, Ordering::Relaxed) {
        log::warn!("projection KKT system is ill-conditioned; using a least-squares solve");
    }
    let svd = a.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let smax = svd.singular_values.max();
    let mut p = DMatrix::identity(d, d);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > 1e-9 * smax.max(1.0) {
            let v = v_t.row(k).transpose();
            p -= &v * v.transpose();
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projector_annihilates_active_rows() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
        let p = null_space_projector(&a);
        assert!((&a * &p).amax() < 1e-12);
        assert!((&p * DVector::from_row_slice(&[0.0, 0.0, 1.0]) - DVector::from_row_slice(&[0.0, 0.0, 1.0])).amax() < 1e-12);
    }

    #[test]
    fn dependent_rows_use_least_squares() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 0.0, 0.0, 1.0]);
        let p = null_space_projector(&a);
        assert!(p.amax() < 1e-12);
    }
}
