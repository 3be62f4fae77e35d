//! Dynamics, costs, the condensed finite-horizon problem and the online MPC
//! oracle.

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::linalg::{block_diag, vconcat, vstack};
use crate::optim::{kkt_residual, solve_qp_with, QpProblem, QpSettings, SolveStatus};
use crate::polytope::{tighten, Polytope};
use crate::{Error, Result};

/// `x⁺ = Ax + Bu + d` with polytopic state, input and disturbance sets, an
/// RCI set `S ⊆ X` and its target set `T = S ⊖ D`.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    state_set: Polytope,
    input_set: Polytope,
    disturbance_set: Polytope,
    rci_set: Polytope,
    target_set: Polytope,
}

impl LinearSystem {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        state_set: Polytope,
        input_set: Polytope,
        disturbance_set: Polytope,
        rci_set: Polytope,
    ) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        if a.ncols() != n || b.nrows() != n {
            return Err(Error::Dimension(format!(
                "A is {}x{}, B is {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        for (name, dim, want) in [
            ("X", state_set.dim(), n),
            ("U", input_set.dim(), m),
            ("D", disturbance_set.dim(), n),
            ("S", rci_set.dim(), n),
        ] {
            if dim != want {
                return Err(Error::Dimension(format!("{name} lives in R^{dim}, expected R^{want}")));
            }
        }
        if !state_set.contains_polytope(&rci_set, 1e-9)? {
            return Err(Error::InvalidInput("S is not contained in X".into()));
        }
        let target_set = tighten(&rci_set, &disturbance_set)?;
        Ok(Self {
            a,
            b,
            state_set,
            input_set,
            disturbance_set,
            rci_set,
            target_set,
        })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn state_set(&self) -> &Polytope {
        &self.state_set
    }

    pub fn input_set(&self) -> &Polytope {
        &self.input_set
    }

    pub fn disturbance_set(&self) -> &Polytope {
        &self.disturbance_set
    }

    pub fn rci_set(&self) -> &Polytope {
        &self.rci_set
    }

    pub fn target_set(&self) -> &Polytope {
        &self.target_set
    }

    /// Nominal successor `Ax + Bu`.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }
}

/// Differentiable stage and terminal costs.
pub trait CostModel: Debug + Send + Sync {
    fn stage(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64;
    /// `(∂l/∂x, ∂l/∂u)`.
    fn stage_grad(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DVector<f64>, DVector<f64>);
    fn terminal(&self, x: &DVector<f64>) -> f64;
    fn terminal_grad(&self, x: &DVector<f64>) -> DVector<f64>;
    /// `(c1, c2)` when the cost is `‖x‖² + c1‖u‖²` with terminal `c2‖x‖²`;
    /// the online oracle needs this form.
    fn quadratic_weights(&self) -> Option<(f64, f64)> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticCost {
    pub c1: f64,
    pub c2: f64,
}

impl CostModel for QuadraticCost {
    fn stage(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        x.norm_squared() + self.c1 * u.norm_squared()
    }

    fn stage_grad(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (x * 2.0, u * (2.0 * self.c1))
    }

    fn terminal(&self, x: &DVector<f64>) -> f64 {
        self.c2 * x.norm_squared()
    }

    fn terminal_grad(&self, x: &DVector<f64>) -> DVector<f64> {
        x * (2.0 * self.c2)
    }

    fn quadratic_weights(&self) -> Option<(f64, f64)> {
        Some((self.c1, self.c2))
    }
}

pub fn stage_cost(x: &DVector<f64>, u: &DVector<f64>, c1: f64) -> f64 {
    x.norm_squared() + c1 * u.norm_squared()
}

pub fn terminal_cost(x: &DVector<f64>, c2: f64) -> f64 {
    c2 * x.norm_squared()
}

/// Condensed horizon-`τ` problem: states `x₁…x_τ = M₀x₀ + M_u u` and the
/// feasible set `F(x₀) = {u | H_s(M₀x₀ + M_u u) ≤ h̃_s, H_u u ≤ h_u}`.
#[derive(Debug, Clone)]
pub struct CondensedMpc {
    sys: LinearSystem,
    horizon: usize,
    m0: DMatrix<f64>,
    mu: DMatrix<f64>,
    hs: DMatrix<f64>,
    hu: DMatrix<f64>,
    hs_rhs: DVector<f64>,
    hu_rhs: DVector<f64>,
    /// `[H_s M_u; H_u]`.
    a_f: DMatrix<f64>,
    hs_m0: DMatrix<f64>,
    cost: Arc<dyn CostModel>,
}

impl CondensedMpc {
    pub fn new(sys: &LinearSystem, horizon: usize, cost: Arc<dyn CostModel>) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidInput("horizon must be at least 1".into()));
        }
        let (n, m) = (sys.n(), sys.m());
        let mut m0 = DMatrix::zeros(n * horizon, n);
        let mut power = sys.a.clone();
        for k in 0..horizon {
            m0.view_mut((k * n, 0), (n, n)).copy_from(&power);
            power = &sys.a * power;
        }
        // Block (k, j) of M_u is A^{k-j} B for j ≤ k (rows are x_{k+1}).
        let mut blocks = vec![sys.b.clone()];
        for k in 1..horizon {
            blocks.push(&sys.a * &blocks[k - 1]);
        }
        let mut mu = DMatrix::zeros(n * horizon, m * horizon);
        for k in 0..horizon {
            for j in 0..=k {
                mu.view_mut((k * n, j * m), (n, m)).copy_from(&blocks[k - j]);
            }
        }
        let t = &sys.target_set;
        let u = &sys.input_set;
        let hs = block_diag(t.f(), horizon);
        let hu = block_diag(u.f(), horizon);
        let hs_rhs = vconcat(&vec![t.g(); horizon]);
        let hu_rhs = vconcat(&vec![u.g(); horizon]);
        let a_f = vstack(&[&(&hs * &mu), &hu]);
        let hs_m0 = &hs * &m0;
        Ok(Self {
            sys: sys.clone(),
            horizon,
            m0,
            mu,
            hs,
            hu,
            hs_rhs,
            hu_rhs,
            a_f,
            hs_m0,
            cost,
        })
    }

    /// Quadratic costs `‖x‖² + c1‖u‖²` and `c2‖x‖²`.
    pub fn quadratic(sys: &LinearSystem, horizon: usize, c1: f64, c2: f64) -> Result<Self> {
        if !(c1 > 0.0 && c2 > 0.0) {
            return Err(Error::InvalidInput("cost weights must be positive".into()));
        }
        Self::new(sys, horizon, Arc::new(QuadraticCost { c1, c2 }))
    }

    pub fn system(&self) -> &LinearSystem {
        &self.sys
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n(&self) -> usize {
        self.sys.n()
    }

    pub fn m(&self) -> usize {
        self.sys.m()
    }

    /// Length `mτ` of an input sequence.
    pub fn n_inputs(&self) -> usize {
        self.sys.m() * self.horizon
    }

    pub fn m0(&self) -> &DMatrix<f64> {
        &self.m0
    }

    pub fn mu(&self) -> &DMatrix<f64> {
        &self.mu
    }

    pub fn hs(&self) -> &DMatrix<f64> {
        &self.hs
    }

    pub fn hu(&self) -> &DMatrix<f64> {
        &self.hu
    }

    pub fn hs_rhs(&self) -> &DVector<f64> {
        &self.hs_rhs
    }

    pub fn hu_rhs(&self) -> &DVector<f64> {
        &self.hu_rhs
    }

    pub fn cost(&self) -> &Arc<dyn CostModel> {
        &self.cost
    }

    /// Left-hand side `[H_s M_u; H_u]` of `F(x₀)`; independent of `x₀`.
    pub fn constraint_matrix(&self) -> &DMatrix<f64> {
        &self.a_f
    }

    /// Right-hand side `[h̃_s − H_s M₀ x₀; h_u]` of `F(x₀)`.
    pub fn constraint_rhs(&self, x0: &DVector<f64>) -> DVector<f64> {
        vconcat(&[&(&self.hs_rhs - &self.hs_m0 * x0), &self.hu_rhs])
    }

    /// `max_i (A_F u − b(x₀))_i`; nonpositive iff `u ∈ F(x₀)`.
    pub fn max_residual(&self, x0: &DVector<f64>, u: &DVector<f64>) -> f64 {
        (&self.a_f * u - self.constraint_rhs(x0)).max()
    }

    /// `F(x₀)` as a polytope in `R^{mτ}`.
    pub fn feasible_set(&self, x0: &DVector<f64>) -> Result<Polytope> {
        let rhs = self.constraint_rhs(x0);
        let keep: Vec<usize> = (0..rhs.len()).filter(|&i| self.a_f.row(i).norm() > 1e-14).collect();
        if let Some(i) = (0..rhs.len()).find(|&i| !keep.contains(&i) && rhs[i] < 0.0) {
            return Err(Error::Empty(format!("constraint {i} of F(x0) reads 0 <= {}", rhs[i])));
        }
        Polytope::new(self.a_f.select_rows(&keep), rhs.select_rows(&keep))
    }

    /// Stacked nominal states `x₁…x_τ`.
    pub fn predict(&self, x0: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.m0 * x0 + &self.mu * u
    }

    /// `Σ_{k<τ} l(x_k, u_k) + l_F(x_τ)` along the nominal rollout.
    pub fn trajectory_cost(&self, x0: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let (n, m) = (self.n(), self.m());
        let xs = self.predict(x0, u);
        let mut total = 0.0;
        for k in 0..self.horizon {
            let uk = u.rows(k * m, m).into_owned();
            let xk = if k == 0 { x0.clone() } else { xs.rows((k - 1) * n, n).into_owned() };
            total += self.cost.stage(&xk, &uk);
        }
        total + self.cost.terminal(&xs.rows((self.horizon - 1) * n, n).into_owned())
    }

    /// Gradient of [`Self::trajectory_cost`] with respect to `u`.
    pub fn trajectory_cost_grad(&self, x0: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let (n, m) = (self.n(), self.m());
        let xs = self.predict(x0, u);
        let mut gu = DVector::zeros(self.n_inputs());
        let mut gx = DVector::zeros(n * self.horizon);
        for k in 0..self.horizon {
            let uk = u.rows(k * m, m).into_owned();
            let xk = if k == 0 { x0.clone() } else { xs.rows((k - 1) * n, n).into_owned() };
            let (dx, du) = self.cost.stage_grad(&xk, &uk);
            gu.rows_mut(k * m, m).copy_from(&du);
            if k > 0 {
                let mut block = gx.rows_mut((k - 1) * n, n);
                block += &dx;
            }
        }
        let last = (self.horizon - 1) * n;
        let dt = self.cost.terminal_grad(&xs.rows(last, n).into_owned());
        let mut block = gx.rows_mut(last, n);
        block += &dt;
        gu + self.mu.tr_mul(&gx)
    }

    /// Online MPC: the condensed QP over `F(x₀)`, solved to KKT residual `tol`.
    pub fn solve_oracle(&self, x0: &DVector<f64>, tol: f64) -> Result<OracleSolution> {
        let (c1, c2) = self
            .cost
            .quadratic_weights()
            .ok_or_else(|| Error::InvalidInput("the online oracle needs a quadratic cost".into()))?;
        let n = self.n();
        // Q_x weights x₁…x_{τ−1} by 1 and x_τ by c2.
        let mut qx = DVector::from_element(n * self.horizon, 1.0);
        qx.rows_mut(n * (self.horizon - 1), n).fill(c2);
        let mut weighted = self.mu.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= qx[i];
        }
        let mut hessian = self.mu.tr_mul(&weighted) * 2.0;
        for i in 0..self.n_inputs() {
            hessian[(i, i)] += 2.0 * c1;
        }
        let hessian = (&hessian + hessian.transpose()) * 0.5;
        let q = weighted.tr_mul(&(&self.m0 * x0)) * 2.0;
        let qp = QpProblem::new(hessian, q, self.a_f.clone(), self.constraint_rhs(x0))?;
        let settings = QpSettings {
            tol,
            ..Default::default()
        };
        let r = solve_qp_with(&qp, &settings, None);
        match r.status {
            SolveStatus::Optimal => {}
            status => return Err(Error::solver(status, "online MPC oracle")),
        }
        let cost = self.trajectory_cost(x0, &r.solution);
        let kkt = kkt_residual(&qp, &r.solution, &r.dual);
        Ok(OracleSolution {
            inputs: r.solution,
            cost,
            kkt_residual: kkt,
            iterations: r.iterations,
        })
    }
}

#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub inputs: DVector<f64>,
    pub cost: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_system(a: f64, b: f64) -> LinearSystem {
        let x = Polytope::hypercube(1, 10.0);
        LinearSystem::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            x.clone(),
            Polytope::hypercube(1, 1.0),
            Polytope::hypercube(1, 0.0),
            x,
        )
        .unwrap()
    }

    #[test]
    fn one_step_condensation_is_a_and_b() {
        let sys = scalar_system(0.7, 2.0);
        let mpc = CondensedMpc::quadratic(&sys, 1, 1.0, 1.0).unwrap();
        assert_eq!(mpc.m0()[(0, 0)], 0.7);
        assert_eq!(mpc.mu()[(0, 0)], 2.0);
    }

    #[test]
    fn zero_state_costs_nothing() {
        assert_eq!(stage_cost(&DVector::zeros(3), &DVector::zeros(2), 1.0), 0.0);
        let e1 = DVector::from_row_slice(&[1.0, 0.0, 0.0]);
        assert_eq!(stage_cost(&e1, &DVector::zeros(2), 1.0), 1.0);
    }

    #[test]
    fn scalar_oracle_matches_clamped_minimum() {
        // min (x0)² + c1 u² + c2 (a x0 + b u)², |u| ≤ 1.
        let (a, b, c1, c2) = (1.2, 1.0, 0.5, 2.0);
        let sys = scalar_system(a, b);
        let mpc = CondensedMpc::quadratic(&sys, 1, c1, c2).unwrap();
        for x0 in [-3.0, -0.4, 0.0, 0.25, 4.0] {
            let x = DVector::from_element(1, x0);
            let sol = mpc.solve_oracle(&x, 1e-9).unwrap();
            let free = -c2 * a * b * x0 / (c1 + c2 * b * b);
            let want = free.clamp(-1.0, 1.0);
            assert!((sol.inputs[0] - want).abs() < 1e-7, "{x0}: {} vs {want}", sol.inputs[0]);
        }
    }

    #[test]
    fn zero_row_with_negative_rhs_is_empty() {
        let sys = scalar_system(1.0, 0.0);
        let mpc = CondensedMpc::quadratic(&sys, 1, 1.0, 1.0).unwrap();
        assert!(mpc.feasible_set(&DVector::from_element(1, 0.0)).is_ok());
        assert!(matches!(mpc.feasible_set(&DVector::from_element(1, 11.0)), Err(Error::Empty(_))));
    }
}
