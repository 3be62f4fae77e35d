//! Penalty baseline: inputs squashed onto the box `U^τ`, state constraints
//! only penalized.

use nalgebra::DVector;

use crate::linalg::vconcat;
use crate::mpc::CondensedMpc;
use crate::polytope::Polytope;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyHead {
    center: DVector<f64>,
    half_width: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct PenaltyCache {
    squashed: DVector<f64>,
}

impl PenaltyHead {
    /// Fails unless `U` is an axis-aligned box.
    pub fn new(mpc: &CondensedMpc) -> Result<Self> {
        let u = mpc.system().input_set();
        let (lo, hi) = u.bounding_box()?;
        let boxed = Polytope::from_box(&lo, &hi)?;
        if !u.contains_polytope(&boxed, 1e-9)? {
            return Err(Error::InvalidInput(
                "the penalty baseline needs a box-shaped input set".into(),
            ));
        }
        let center = (&lo + &hi) * 0.5;
        let half = (&hi - &lo) * 0.5;
        let reps = mpc.horizon();
        Ok(Self {
            center: vconcat(&vec![&center; reps]),
            half_width: vconcat(&vec![&half; reps]),
        })
    }

    pub fn forward(&self, raw: &DVector<f64>) -> (DVector<f64>, PenaltyCache) {
        let squashed = raw.map(f64::tanh);
        let u = &self.center + self.half_width.component_mul(&squashed);
        (u, PenaltyCache { squashed })
    }

    pub fn backward(&self, cache: &PenaltyCache, upstream: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(upstream.len(), |i, _| {
            upstream[i] * self.half_width[i] * (1.0 - cache.squashed[i] * cache.squashed[i])
        })
    }
}

/// `β Σ_k Σ_rows max(0, F_T x_k − g̃)` over the predicted states `x₁…x_τ`, and
/// its gradient in `u`.
pub fn penalty_term(mpc: &CondensedMpc, x0: &DVector<f64>, u: &DVector<f64>, beta: f64) -> (f64, DVector<f64>) {
    let viol = mpc.hs() * mpc.predict(x0, u) - mpc.hs_rhs();
    let value = beta * viol.iter().map(|v| v.max(0.0)).sum::<f64>();
    let active = viol.map(|v| if v > 0.0 { beta } else { 0.0 });
    let grad = mpc.mu().tr_mul(&mpc.hs().tr_mul(&active));
    (value, grad)
}

/// Batch-mean trajectory cost plus penalty.
pub fn penalty_loss(mpc: &CondensedMpc, states: &[DVector<f64>], inputs: &[DVector<f64>], beta: f64) -> f64 {
    let total: f64 = states
        .iter()
        .zip(inputs)
        .map(|(x, u)| mpc.trajectory_cost(x, u) + penalty_term(mpc, x, u, beta).0)
        .sum();
    total / states.len().max(1) as f64
}
