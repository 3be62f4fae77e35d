//! Networks, optimizer, training loop, and the penalty and projection
//! baselines.

mod adam;
pub mod hpsearch;
mod io;
mod mlp;
pub mod penalty;
pub mod projection;
mod train;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use io::WeightsFile;
pub use mlp::{Layer, Mlp, MlpCache};
pub use penalty::{penalty_loss, penalty_term, PenaltyCache, PenaltyHead};
pub use projection::{ProjectionCache, ProjectionHead};
pub use train::{
    batch_objective, train, train_from, train_with_validation, validation_seed, validate, BatchObjective, TrainConfig, TrainOutcome,
    TrainTrace, ValidationSet, SAFETY_TOL,
};

use crate::gauge_policy::{GaugeHead, GaugeHeadCache, Squash};
use crate::mpc::CondensedMpc;
use crate::phase1::PhaseOne;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Gauge,
    Penalty,
    Projection,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [PolicyKind::Gauge, PolicyKind::Penalty, PolicyKind::Projection];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Gauge => "gauge",
            PolicyKind::Penalty => "penalty",
            PolicyKind::Projection => "projection",
        }
    }

    /// Outputs are guaranteed to lie in `F(x₀)`.
    pub fn is_safe(self) -> bool {
        !matches!(self, PolicyKind::Penalty)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown policy kind {s:?}")))
    }
}

/// Output layer turning raw network outputs into input sequences.
#[derive(Debug, Clone)]
pub enum Head {
    Gauge(GaugeHead),
    Penalty(PenaltyHead),
    Projection(ProjectionHead),
}

#[derive(Debug, Clone)]
pub enum HeadCache {
    Gauge(GaugeHeadCache),
    Penalty(PenaltyCache),
    Projection(ProjectionCache),
}

impl Head {
    /// `phase1` is required for the gauge kind only.
    pub fn new(kind: PolicyKind, mpc: &CondensedMpc, phase1: Option<&PhaseOne>, squash: Squash) -> Result<Self> {
        Ok(match kind {
            PolicyKind::Gauge => {
                let p1 = phase1.ok_or_else(|| {
                    Error::InvalidInput("the gauge policy needs a Phase I method".into())
                })?;
                Head::Gauge(GaugeHead::new(mpc, p1.clone(), squash))
            }
            PolicyKind::Penalty => Head::Penalty(PenaltyHead::new(mpc)?),
            PolicyKind::Projection => Head::Projection(ProjectionHead::default()),
        })
    }

    pub fn kind(&self) -> PolicyKind {
        match self {
            Head::Gauge(_) => PolicyKind::Gauge,
            Head::Penalty(_) => PolicyKind::Penalty,
            Head::Projection(_) => PolicyKind::Projection,
        }
    }

    pub fn forward(
        &self,
        mpc: &CondensedMpc,
        x0: &DVector<f64>,
        raw: DVector<f64>,
    ) -> Result<(DVector<f64>, HeadCache)> {
        match self {
            Head::Gauge(h) => h.forward(mpc, x0, raw).map(|(u, c)| (u, HeadCache::Gauge(c))),
            Head::Penalty(h) => {
                let (u, c) = h.forward(&raw);
                Ok((u, HeadCache::Penalty(c)))
            }
            Head::Projection(h) => h.forward(mpc, x0, &raw).map(|(u, c)| (u, HeadCache::Projection(c))),
        }
    }

    pub fn backward(&self, mpc: &CondensedMpc, cache: &HeadCache, upstream: &DVector<f64>) -> DVector<f64> {
        match (self, cache) {
            (Head::Gauge(h), HeadCache::Gauge(c)) => h.backward(mpc, c, upstream),
            (Head::Penalty(h), HeadCache::Penalty(c)) => h.backward(c, upstream),
            (Head::Projection(h), HeadCache::Projection(c)) => h.backward(c, upstream),
            _ => panic!("head cache from a different policy kind"),
        }
    }
}

/// A network and its output head.
#[derive(Debug, Clone)]
pub struct NeuralPolicy {
    pub mlp: Mlp,
    pub head: Head,
}

/// Intermediates of a batched forward pass.
#[derive(Debug, Clone)]
pub struct BatchCache {
    mlp: MlpCache,
    heads: Vec<HeadCache>,
}

impl NeuralPolicy {
    pub fn new(mlp: Mlp, head: Head, mpc: &CondensedMpc) -> Result<Self> {
        if mlp.n_inputs() != mpc.n() || mlp.n_outputs() != mpc.n_inputs() {
            return Err(Error::Dimension(format!(
                "network maps R^{} to R^{}, expected R^{} to R^{}",
                mlp.n_inputs(),
                mlp.n_outputs(),
                mpc.n(),
                mpc.n_inputs()
            )));
        }
        Ok(Self { mlp, head })
    }

    pub fn kind(&self) -> PolicyKind {
        self.head.kind()
    }

    pub fn plan(&self, mpc: &CondensedMpc, x0: &DVector<f64>) -> Result<DVector<f64>> {
        let raw = self.mlp.forward(x0);
        Ok(self.head.forward(mpc, x0, raw)?.0)
    }

    pub fn forward_batch(
        &self,
        mpc: &CondensedMpc,
        states: &[DVector<f64>],
    ) -> Result<(Vec<DVector<f64>>, BatchCache)> {
        let n = mpc.n();
        let x = DMatrix::from_fn(n, states.len(), |i, j| states[j][i]);
        let (raw, mlp) = self.mlp.forward_batch(&x);
        let mut outputs = Vec::with_capacity(states.len());
        let mut heads = Vec::with_capacity(states.len());
        for (j, x0) in states.iter().enumerate() {
            let (u, c) = self.head.forward(mpc, x0, raw.column(j).into_owned())?;
            outputs.push(u);
            heads.push(c);
        }
        Ok((outputs, BatchCache { mlp, heads }))
    }

    /// Parameter gradient for per-sample upstream gradients `∂L/∂u_j`.
    pub fn backward_batch(&self, mpc: &CondensedMpc, cache: &BatchCache, upstream: &[DVector<f64>]) -> Mlp {
        let d = self.mlp.n_outputs();
        let mut d_raw = DMatrix::zeros(d, upstream.len());
        for (j, (c, up)) in cache.heads.iter().zip(upstream).enumerate() {
            d_raw.set_column(j, &self.head.backward(mpc, c, up));
        }
        self.mlp.backward_batch(&cache.mlp, &d_raw)
    }
}
