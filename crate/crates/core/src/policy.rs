//! Controllers usable in closed loop: trained networks, the online oracle
//! and the bare Phase I law.

use nalgebra::DVector;

use crate::gauge_policy::extract_first_action;
use crate::learner::NeuralPolicy;
use crate::mpc::CondensedMpc;
use crate::phase1::PhaseOne;
use crate::Result;

/// State feedback that plans a full input sequence and applies its first
/// action.
pub trait ControlPolicy {
    fn name(&self) -> String;

    /// Input sequence in `R^{mτ}` for the initial state `x0`.
    fn plan(&self, x0: &DVector<f64>) -> Result<DVector<f64>>;

    fn input_dim(&self) -> usize;

    fn act(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        extract_first_action(&self.plan(x)?, self.input_dim())
    }
}

/// A trained network together with the problem it was trained on.
#[derive(Debug, Clone)]
pub struct NeuralController<'a> {
    pub net: &'a NeuralPolicy,
    pub mpc: &'a CondensedMpc,
}

impl ControlPolicy for NeuralController<'_> {
    fn name(&self) -> String {
        self.net.kind().to_string()
    }

    fn plan(&self, x0: &DVector<f64>) -> Result<DVector<f64>> {
        self.net.plan(self.mpc, x0)
    }

    fn input_dim(&self) -> usize {
        self.mpc.m()
    }
}

/// Solves the MPC problem online at every step.
#[derive(Debug, Clone)]
pub struct OracleController<'a> {
    pub mpc: &'a CondensedMpc,
    pub tol: f64,
}

impl<'a> OracleController<'a> {
    pub fn new(mpc: &'a CondensedMpc) -> Self {
        Self { mpc, tol: 1e-8 }
    }
}

impl ControlPolicy for OracleController<'_> {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn plan(&self, x0: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.mpc.solve_oracle(x0, self.tol)?.inputs)
    }

    fn input_dim(&self) -> usize {
        self.mpc.m()
    }
}

/// The Phase I interior point used as a policy on its own.
#[derive(Debug, Clone)]
pub struct PhaseOneController<'a> {
    pub mpc: &'a CondensedMpc,
    pub phase1: &'a PhaseOne,
}

impl ControlPolicy for PhaseOneController<'_> {
    fn name(&self) -> String {
        "phase1".into()
    }

    fn plan(&self, x0: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.phase1.interior_point(self.mpc, x0)?.inputs)
    }

    fn input_dim(&self) -> usize {
        self.mpc.m()
    }
}
