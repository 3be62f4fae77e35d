use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{penalty_term, Adam, Head, Mlp, NeuralPolicy, PolicyKind};
use crate::gauge_policy::Squash;
use crate::mpc::CondensedMpc;
use crate::phase1::PhaseOne;
use crate::polytope::UniformSampler;
use crate::{Error, Result};

/// Outputs of safe kinds may leave `F(x₀)` by at most this much.
pub const SAFETY_TOL: f64 = 1e-7;
const ORACLE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub kind: PolicyKind,
    pub width: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Penalty weight; only used by the penalty kind.
    pub beta: f64,
    pub n_val: usize,
    pub validate_every: usize,
    #[serde(default)]
    pub squash: Squash,
    /// Every this many iterations all batch outputs of a safe kind are
    /// checked against `F(x₀)`.
    pub safety_check_every: usize,
}

impl TrainConfig {
    /// Hyperparameters tuned for the bundled system at full scale.
    pub fn full(kind: PolicyKind) -> Self {
        let (width, lr, batch_size) = match kind {
            PolicyKind::Gauge => (859, 4.7e-4, 1655),
            PolicyKind::Penalty => (318, 8.7e-4, 133),
            PolicyKind::Projection => (956, 9.0e-5, 813),
        };
        Self {
            kind,
            width,
            lr,
            batch_size,
            iterations: 2000,
            seed: 0,
            beta: 10.0,
            n_val: 100,
            validate_every: 50,
            squash: Squash::Tanh,
            safety_check_every: 10,
        }
    }

    /// Small networks that train in about ten seconds (projection: about a
    /// minute and a half) on one core.
    pub fn desk(kind: PolicyKind) -> Self {
        Self {
            width: 128,
            lr: 3e-3,
            batch_size: 128,
            iterations: 3000,
            ..Self::full(kind)
        }
    }

    pub fn check(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidInput(format!("training config: {what}")));
        if self.width == 0 || self.batch_size == 0 || self.n_val == 0 {
            return bad("width, batch size and validation size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be nonnegative");
        }
        if self.validate_every == 0 || self.safety_check_every == 0 {
            return bad("check intervals must be positive");
        }
        Ok(())
    }
}

/// Validation states with their optimal costs.
#[derive(Debug, Clone)]
pub struct ValidationSet {
    pub states: Vec<DVector<f64>>,
    pub oracle_costs: Vec<f64>,
}

impl ValidationSet {
    /// Samples `count` states of `S`; states where the oracle fails are
    /// replaced.
    pub fn new(mpc: &CondensedMpc, count: usize, seed: u64) -> Result<Self> {
        let mut sampler = UniformSampler::new(mpc.system().rci_set(), seed)?;
        let mut states = Vec::with_capacity(count);
        let mut oracle_costs = Vec::with_capacity(count);
        while states.len() < count {
            let x0 = sampler.sample()?;
            match mpc.solve_oracle(&x0, ORACLE_TOL) {
                Ok(sol) => {
                    states.push(x0);
                    oracle_costs.push(sol.cost);
                }
                Err(e) => log::warn!("validation state resampled: {e}"),
            }
        }
        Ok(Self { states, oracle_costs })
    }

    /// `δ = (c_nn − c_mpc) / c_mpc` with both costs averaged over the set.
    pub fn delta_with<F>(&self, mpc: &CondensedMpc, plan: F) -> Result<f64>
    where
        F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
    {
        let mut c_nn = 0.0;
        for x0 in &self.states {
            c_nn += mpc.trajectory_cost(x0, &plan(x0)?);
        }
        let c_mpc: f64 = self.oracle_costs.iter().sum();
        Ok((c_nn - c_mpc) / c_mpc)
    }
}

pub fn validate(policy: &NeuralPolicy, mpc: &CondensedMpc, val: &ValidationSet) -> Result<f64> {
    val.delta_with(mpc, |x0| policy.plan(mpc, x0))
}

/// Batch objective and its parameter gradient.
#[derive(Debug, Clone)]
pub struct BatchObjective {
    /// Mean trajectory cost plus, for the penalty kind, the mean penalty.
    pub loss: f64,
    /// Mean trajectory cost alone.
    pub cost: f64,
    pub grads: Mlp,
    pub outputs: Vec<DVector<f64>>,
}

pub fn batch_objective(
    policy: &NeuralPolicy,
    mpc: &CondensedMpc,
    states: &[DVector<f64>],
    beta: f64,
) -> Result<BatchObjective> {
    let (outputs, cache) = policy.forward_batch(mpc, states)?;
    let scale = 1.0 / states.len() as f64;
    let mut cost = 0.0;
    let mut penalty = 0.0;
    let mut upstream = Vec::with_capacity(states.len());
    for (x0, u) in states.iter().zip(&outputs) {
        cost += mpc.trajectory_cost(x0, u);
        let mut g = mpc.trajectory_cost_grad(x0, u);
        if policy.kind() == PolicyKind::Penalty {
            let (p, gp) = penalty_term(mpc, x0, u, beta);
            penalty += p;
            g += gp;
        }
        upstream.push(g * scale);
    }
    let grads = policy.backward_batch(mpc, &cache, &upstream);
    Ok(BatchObjective {
        loss: (cost + penalty) * scale,
        cost: cost * scale,
        grads,
        outputs,
    })
}

/// Per-iteration losses and validation checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub kind: PolicyKind,
    pub loss: Vec<f64>,
    pub cost: Vec<f64>,
    /// `(iterations completed, δ)`, starting with the untrained network.
    pub checkpoints: Vec<(usize, f64)>,
    /// Wall time of each iteration.
    pub seconds: Vec<f64>,
    pub best_iteration: usize,
    pub best_delta: f64,
}

impl TrainTrace {
    /// Mean training loss over the `window` iterations ending at `iteration`
    /// (1-based count of completed iterations).
    pub fn loss_at(&self, iteration: usize, window: usize) -> f64 {
        let end = iteration.min(self.loss.len());
        let start = end.saturating_sub(window.max(1));
        let slice = &self.loss[start..end];
        slice.iter().sum::<f64>() / slice.len().max(1) as f64
    }

    /// `iteration,loss,cost,delta`; `delta` is empty between checkpoints.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,loss,cost,delta\n");
        let mut cps = self.checkpoints.iter().peekable();
        if let Some(&&(0, d)) = cps.peek() {
            out.push_str(&format!("0,,,{d:e}\n"));
            cps.next();
        }
        for (i, (l, c)) in self.loss.iter().zip(&self.cost).enumerate() {
            let it = i + 1;
            let delta = match cps.peek() {
                Some(&&(k, d)) if k == it => {
                    cps.next();
                    format!("{d:e}")
                }
                _ => String::new(),
            };
            out.push_str(&format!("{it},{l:e},{c:e},{delta}\n"));
        }
        out
    }

    pub fn timing_csv(&self) -> String {
        let mut out = String::from("iteration,seconds\n");
        for (i, s) in self.seconds.iter().enumerate() {
            out.push_str(&format!("{},{s:e}\n", i + 1));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Network with the best validation δ seen.
    pub policy: NeuralPolicy,
    pub trace: TrainTrace,
    pub optimizer: Adam,
}

/// Seed of the validation set drawn by [`train`] for a training seed.
pub fn validation_seed(seed: u64) -> u64 {
    seed ^ 0x5eed_0fa1_1da7_e000
}

pub fn train(mpc: &CondensedMpc, phase1: Option<&PhaseOne>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.check()?;
    let val = ValidationSet::new(mpc, cfg.n_val, validation_seed(cfg.seed))?;
    train_with_validation(mpc, phase1, cfg, &val)
}

/// [`train`] against a caller-supplied validation set.
pub fn train_with_validation(
    mpc: &CondensedMpc,
    phase1: Option<&PhaseOne>,
    cfg: &TrainConfig,
    val: &ValidationSet,
) -> Result<TrainOutcome> {
    cfg.check()?;
    let mlp = Mlp::two_hidden(mpc.n(), cfg.width, mpc.n_inputs(), cfg.seed)?;
    train_from(mpc, phase1, cfg, val, mlp)
}

/// [`train_with_validation`] starting from the given network.
pub fn train_from(
    mpc: &CondensedMpc,
    phase1: Option<&PhaseOne>,
    cfg: &TrainConfig,
    val: &ValidationSet,
    mlp: Mlp,
) -> Result<TrainOutcome> {
    cfg.check()?;
    let head = Head::new(cfg.kind, mpc, phase1, cfg.squash)?;
    let mut policy = NeuralPolicy::new(mlp, head, mpc)?;
    let mut adam = Adam::new(policy.mlp.n_params(), cfg.lr);
    let mut sampler = UniformSampler::new(mpc.system().rci_set(), cfg.seed.wrapping_add(1))?;

    let initial = validate(&policy, mpc, val)?;
    let mut trace = TrainTrace {
        kind: cfg.kind,
        loss: Vec::with_capacity(cfg.iterations),
        cost: Vec::with_capacity(cfg.iterations),
        checkpoints: vec![(0, initial)],
        seconds: Vec::with_capacity(cfg.iterations),
        best_iteration: 0,
        best_delta: initial,
    };
    let mut best = policy.mlp.clone();

    for it in 0..cfg.iterations {
        let start = Instant::now();
        let states = sampler.sample_n(cfg.batch_size)?;
        let obj = batch_objective(&policy, mpc, &states, cfg.beta)?;
        if !obj.loss.is_finite() || !obj.grads.is_finite() {
            return Err(Error::Diverged(it));
        }
        if cfg.kind.is_safe() && it % cfg.safety_check_every == 0 {
            for (x0, u) in states.iter().zip(&obj.outputs) {
                let r = mpc.max_residual(x0, u);
                if r > SAFETY_TOL {
                    return Err(Error::SafetyViolation(r));
                }
            }
        }
        adam.step(&mut policy.mlp, &obj.grads)?;
        trace.loss.push(obj.loss);
        trace.cost.push(obj.cost);
        trace.seconds.push(start.elapsed().as_secs_f64());

        let done = it + 1;
        if done % cfg.validate_every == 0 || done == cfg.iterations {
            let delta = validate(&policy, mpc, val)?;
            log::debug!("{} iteration {done}: loss {:.5e}, delta {delta:.4e}", cfg.kind, obj.loss);
            trace.checkpoints.push((done, delta));
            if delta < trace.best_delta {
                trace.best_delta = delta;
                trace.best_iteration = done;
                best = policy.mlp.clone();
            }
        }
    }
    policy.mlp = best;
    Ok(TrainOutcome {
        policy,
        trace,
        optimizer: adam,
    })
}
