//! The safe policy: MLP, squash onto the unit hypercube, gauge map into the
//! shifted feasible set, shift back by the Phase I point.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::learner::{Mlp, MlpCache};
use crate::mpc::CondensedMpc;
use crate::phase1::PhaseOne;
use crate::polytope::{gauge_rows, vjp_rows, Polytope};
use crate::{Error, Result};

/// Offsets of the shifted feasible set are floored here before dividing.
const OFFSET_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Squash {
    #[default]
    Tanh,
    Clamp,
}

impl Squash {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Squash::Tanh => v.tanh(),
            Squash::Clamp => v.clamp(-1.0, 1.0),
        }
    }

    /// Derivative given the input and the squashed value; zero in the
    /// saturated region of the clamp.
    pub fn derivative(self, raw: f64, squashed: f64) -> f64 {
        match self {
            Squash::Tanh => 1.0 - squashed * squashed,
            Squash::Clamp => {
                if raw.abs() < 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Maps raw network outputs into `F(x₀)`.
#[derive(Debug, Clone)]
pub struct GaugeHead {
    pub phase1: PhaseOne,
    pub squash: Squash,
    cube: Polytope,
}

#[derive(Debug, Clone)]
pub struct GaugeHeadCache {
    raw: DVector<f64>,
    psi: DVector<f64>,
    /// Offsets of `F̃(x₀) = F(x₀) − μ₀(x₀)` after flooring.
    offsets: DVector<f64>,
    pub phase1_point: DVector<f64>,
}

impl GaugeHead {
    pub fn new(mpc: &CondensedMpc, phase1: PhaseOne, squash: Squash) -> Self {
        Self {
            phase1,
            squash,
            cube: Polytope::hypercube(mpc.n_inputs(), 1.0),
        }
    }

    pub fn forward(
        &self,
        mpc: &CondensedMpc,
        x0: &DVector<f64>,
        raw: DVector<f64>,
    ) -> Result<(DVector<f64>, GaugeHeadCache)> {
        if raw.len() != mpc.n_inputs() {
            return Err(Error::Dimension("network output is not of length m·tau".into()));
        }
        let p1 = self.phase1.interior_point(mpc, x0)?;
        let offsets = p1.slack.map(|s| s.max(OFFSET_FLOOR));
        let psi = raw.map(|v| self.squash.apply(v));
        let out = if psi.iter().all(|&v| v == 0.0) {
            p1.inputs.clone()
        } else {
            let gp = psi.amax();
            let (gq, _) = gauge_rows(mpc.constraint_matrix(), &offsets, &psi);
            if !(gq > 0.0) {
                return Err(Error::NotCSet("shifted feasible set is unbounded".into()));
            }
            &psi * (gp / gq) + &p1.inputs
        };
        Ok((
            out,
            GaugeHeadCache {
                raw,
                psi,
                offsets,
                phase1_point: p1.inputs,
            },
        ))
    }

    /// `∂L/∂raw` from `∂L/∂u`; the Phase I point and the shifted set are
    /// constants with respect to the network.
    pub fn backward(&self, mpc: &CondensedMpc, cache: &GaugeHeadCache, upstream: &DVector<f64>) -> DVector<f64> {
        let d_psi = vjp_rows(
            (self.cube.f(), self.cube.g()),
            (mpc.constraint_matrix(), &cache.offsets),
            &cache.psi,
            upstream,
        );
        DVector::from_fn(d_psi.len(), |i, _| {
            d_psi[i] * self.squash.derivative(cache.raw[i], cache.psi[i])
        })
    }
}

/// Network plus gauge head.
#[derive(Debug, Clone)]
pub struct GaugePolicy {
    pub mlp: Mlp,
    pub head: GaugeHead,
}

#[derive(Debug, Clone)]
pub struct GaugeCache {
    mlp: MlpCache,
    pub head: GaugeHeadCache,
}

impl GaugePolicy {
    pub fn new(mpc: &CondensedMpc, mlp: Mlp, phase1: PhaseOne, squash: Squash) -> Result<Self> {
        if mlp.n_inputs() != mpc.n() || mlp.n_outputs() != mpc.n_inputs() {
            return Err(Error::Dimension(format!(
                "network maps R^{} to R^{}, expected R^{} to R^{}",
                mlp.n_inputs(),
                mlp.n_outputs(),
                mpc.n(),
                mpc.n_inputs()
            )));
        }
        Ok(Self {
            mlp,
            head: GaugeHead::new(mpc, phase1, squash),
        })
    }

    pub fn policy_forward(&self, mpc: &CondensedMpc, x0: &DVector<f64>) -> Result<(DVector<f64>, GaugeCache)> {
        let (raw, mlp) = self
            .mlp
            .forward_batch(&DMatrix::from_column_slice(x0.len(), 1, x0.as_slice()));
        let (u, head) = self.head.forward(mpc, x0, raw.column(0).into_owned())?;
        Ok((u, GaugeCache { mlp, head }))
    }

    pub fn policy_backward(&self, mpc: &CondensedMpc, cache: &GaugeCache, upstream: &DVector<f64>) -> Mlp {
        let d_raw = self.head.backward(mpc, &cache.head, upstream);
        self.mlp
            .backward_batch(&cache.mlp, &DMatrix::from_column_slice(d_raw.len(), 1, d_raw.as_slice()))
    }
}

/// First `m` entries of a stacked input sequence.
pub fn extract_first_action(inputs: &DVector<f64>, m: usize) -> Result<DVector<f64>> {
    if m == 0 || inputs.len() % m != 0 {
        return Err(Error::Dimension(format!(
            "sequence of length {} is not a multiple of m = {m}",
            inputs.len()
        )));
    }
    Ok(inputs.rows(0, m).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_action() {
        let seq = DVector::from_iterator(10, (1..=10).map(f64::from));
        assert_eq!(extract_first_action(&seq, 2).unwrap(), DVector::from_row_slice(&[1.0, 2.0]));
        let one = DVector::from_row_slice(&[4.0, 5.0]);
        assert_eq!(extract_first_action(&one, 2).unwrap(), one);
        assert!(extract_first_action(&seq, 3).is_err());
    }

    #[test]
    fn clamp_has_dead_zone() {
        assert_eq!(Squash::Clamp.derivative(1.5, 1.0), 0.0);
        assert_eq!(Squash::Clamp.derivative(0.5, 0.5), 1.0);
        let t = 0.3f64.tanh();
        assert!((Squash::Tanh.derivative(0.3, t) - (1.0 - t * t)).abs() < 1e-15);
    }
}
