//! Closed-loop simulation under autoregressive disturbances and the
//! benchmark harness comparing policies.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::learner::ValidationSet;
use crate::mpc::CondensedMpc;
use crate::policy::ControlPolicy;
use crate::polytope::{Polytope, UniformSampler};
use crate::{Error, Result};

/// A state violates `S` when some row exceeds its offset by more than this.
pub const VIOLATION_TOL: f64 = 1e-7;
/// Slack allowed when asserting that a disturbance lies in `D`.
const CONTAINMENT_TOL: f64 = 1e-12;

/// `d_{t+1} = α d_t + (1 − α) d̂` with `d̂` uniform on `D`.
#[derive(Debug, Clone)]
pub struct DisturbanceProcess {
    alpha: f64,
    d: DVector<f64>,
    set: Polytope,
    sampler: UniformSampler,
}

impl DisturbanceProcess {
    /// Starts at `d₀ = 0`, which must lie in `D`.
    pub fn new(set: &Polytope, alpha: f64, seed: u64) -> Result<Self> {
        Self::starting_at(set, alpha, seed, DVector::zeros(set.dim()))
    }

    pub fn starting_at(set: &Polytope, alpha: f64, seed: u64, d0: DVector<f64>) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::InvalidInput(format!("alpha {alpha} is not in [0, 1)")));
        }
        if !set.contains_point(&d0, CONTAINMENT_TOL) {
            return Err(Error::InvalidInput("initial disturbance lies outside D".into()));
        }
        Ok(Self {
            alpha,
            d: d0,
            set: set.clone(),
            sampler: UniformSampler::new(set, seed)?,
        })
    }

    pub fn current(&self) -> &DVector<f64> {
        &self.d
    }

    pub fn step(&mut self) -> Result<DVector<f64>> {
        let fresh = self.sampler.sample()?;
        self.d = &self.d * self.alpha + fresh * (1.0 - self.alpha);
        let r = self.set.max_residual(&self.d);
        if r > CONTAINMENT_TOL {
            return Err(Error::InvalidInput(format!("disturbance left D by {r:.3e}")));
        }
        Ok(self.d.clone())
    }
}

/// Free-function form of [`DisturbanceProcess::step`].
pub fn disturbance_step(proc: &mut DisturbanceProcess) -> Result<DVector<f64>> {
    proc.step()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopResult {
    /// `x₀ … x_T`, shorter when the run failed.
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    /// `Σ l(x_t, u_t) + l_F(x_T)`; NaN for failed runs.
    pub cost: f64,
    /// Wall time of each policy call; empty when timing is off.
    pub solve_seconds: Vec<f64>,
    /// Number of visited states outside `S`.
    pub violations: usize,
    pub failure: Option<String>,
}

impl ClosedLoopResult {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

/// Simulates `x_{t+1} = A x_t + B u_t + d_t` for `steps` steps with `u_t` the
/// first action planned by `policy`.
pub fn run_closed_loop(
    policy: &dyn ControlPolicy,
    mpc: &CondensedMpc,
    x0: &DVector<f64>,
    steps: usize,
    proc: &mut DisturbanceProcess,
    timed: bool,
) -> ClosedLoopResult {
    let sys = mpc.system();
    let cost_model = mpc.cost();
    let s = sys.rci_set();
    let outside = |x: &DVector<f64>| usize::from(s.max_residual(x) > VIOLATION_TOL);

    let mut states = vec![x0.clone()];
    let mut inputs = Vec::with_capacity(steps);
    let mut solve_seconds = Vec::with_capacity(if timed { steps } else { 0 });
    let mut violations = outside(x0);
    let mut cost = 0.0;
    let mut failure = None;
    let mut x = x0.clone();
    for t in 0..steps {
        let start = Instant::now();
        let u = policy.act(&x);
        if timed {
            solve_seconds.push(start.elapsed().as_secs_f64());
        }
        let u = match u {
            Ok(u) => u,
            Err(e) => {
                failure = Some(format!("step {t}: {e}"));
                break;
            }
        };
        let d = match proc.step() {
            Ok(d) => d,
            Err(e) => {
                failure = Some(format!("step {t}: {e}"));
                break;
            }
        };
        cost += cost_model.stage(&x, &u);
        x = sys.step(&x, &u) + d;
        violations += outside(&x);
        states.push(x.clone());
        inputs.push(u);
    }
    if failure.is_none() {
        cost += cost_model.terminal(&x);
    } else {
        cost = f64::NAN;
    }
    ClosedLoopResult {
        states,
        inputs,
        cost,
        solve_seconds,
        violations,
        failure,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    /// Trajectories per seed.
    pub n_traj: usize,
    /// Closed-loop length `T`.
    pub steps: usize,
    pub alpha: f64,
    pub seeds: Vec<u64>,
    /// Untimed policy calls made before measuring.
    pub warmup: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            n_traj: 100,
            steps: 50,
            alpha: 0.9,
            seeds: vec![0],
            warmup: 10,
        }
    }
}

/// One closed-loop trajectory of one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub policy: String,
    pub seed: u64,
    pub trajectory: usize,
    pub trajectory_cost: f64,
    pub mean_action_seconds: f64,
    pub violations: usize,
    /// Open-loop δ of the policy on the validation set; NaN without one.
    pub delta_open_loop: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySummary {
    pub policy: String,
    pub trajectories: usize,
    pub failures: usize,
    pub violations: usize,
    /// Min, lower quartile, median, upper quartile, max of the successful
    /// trajectory costs.
    pub cost_quantiles: [f64; 5],
    pub mean_action_seconds: f64,
    pub delta_open_loop: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkTable {
    pub rows: Vec<BenchRow>,
}

/// Linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl BenchmarkTable {
    /// Policy names in first-appearance order.
    pub fn policies(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for r in &self.rows {
            if !names.contains(&r.policy) {
                names.push(r.policy.clone());
            }
        }
        names
    }

    pub fn summary(&self, policy: &str) -> Option<PolicySummary> {
        let rows: Vec<&BenchRow> = self.rows.iter().filter(|r| r.policy == policy).collect();
        if rows.is_empty() {
            return None;
        }
        let mut costs: Vec<f64> = rows.iter().filter(|r| r.failure.is_none()).map(|r| r.trajectory_cost).collect();
        costs.sort_by(f64::total_cmp);
        let q = [0.0, 0.25, 0.5, 0.75, 1.0].map(|p| quantile(&costs, p));
        let timed: Vec<f64> = rows.iter().map(|r| r.mean_action_seconds).filter(|t| t.is_finite()).collect();
        Some(PolicySummary {
            policy: policy.to_string(),
            trajectories: rows.len(),
            failures: rows.iter().filter(|r| r.failure.is_some()).count(),
            violations: rows.iter().map(|r| r.violations).sum(),
            cost_quantiles: q,
            mean_action_seconds: timed.iter().sum::<f64>() / timed.len().max(1) as f64,
            delta_open_loop: rows[0].delta_open_loop,
        })
    }

    /// Deterministic columns only; timings go to [`Self::timing_csv`].
    pub fn to_csv(&self) -> String {
        let mut out = String::from("policy,seed,trajectory,trajectory_cost,violations,delta_open_loop,failure\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:e},{},{:e},{}",
                r.policy,
                r.seed,
                r.trajectory,
                r.trajectory_cost,
                r.violations,
                r.delta_open_loop,
                r.failure.as_deref().unwrap_or("").replace([',', '\n'], ";")
            );
        }
        out
    }

    pub fn timing_csv(&self) -> String {
        let mut out = String::from("policy,seed,trajectory,mean_action_seconds\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{:e}", r.policy, r.seed, r.trajectory, r.mean_action_seconds);
        }
        out
    }

    /// Per-policy cost quartiles for box plots.
    pub fn quartiles_csv(&self) -> String {
        let mut out = String::from("policy,trajectories,failures,violations,min,q1,median,q3,max,delta_open_loop\n");
        for name in self.policies() {
            let s = self.summary(&name).expect("policy has rows");
            let q = s.cost_quantiles;
            let _ = writeln!(
                out,
                "{},{},{},{},{:e},{:e},{:e},{:e},{:e},{:e}",
                s.policy, s.trajectories, s.failures, s.violations, q[0], q[1], q[2], q[3], q[4], s.delta_open_loop
            );
        }
        out
    }

    pub fn timing_summary_csv(&self) -> String {
        let mut out = String::from("policy,mean_action_seconds\n");
        for name in self.policies() {
            let s = self.summary(&name).expect("policy has rows");
            let _ = writeln!(out, "{},{:e}", s.policy, s.mean_action_seconds);
        }
        out
    }
}

/// Initial states of the trajectories run under `seed`.
pub fn initial_states(mpc: &CondensedMpc, count: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
    mpc.system().rci_set().sample_uniform(count, seed)
}

fn disturbance_seed(seed: u64, trajectory: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(trajectory as u64 + 1)
}

/// Runs every policy from the same initial states and disturbance sequences.
/// Failures are kept as annotated rows.
pub fn benchmark_suite(
    policies: &[&dyn ControlPolicy],
    mpc: &CondensedMpc,
    val: Option<&ValidationSet>,
    cfg: &BenchConfig,
) -> Result<BenchmarkTable> {
    if !(0.0..1.0).contains(&cfg.alpha) {
        return Err(Error::InvalidInput(format!("alpha {} is not in [0, 1)", cfg.alpha)));
    }
    let d_set = mpc.system().disturbance_set();
    let mut rows = Vec::new();
    for policy in policies {
        let name = policy.name();
        let delta = match val {
            Some(v) => v.delta_with(mpc, |x| policy.plan(x)).unwrap_or_else(|e| {
                log::warn!("{name}: open-loop evaluation failed: {e}");
                f64::NAN
            }),
            None => f64::NAN,
        };
        for &seed in &cfg.seeds {
            let starts = initial_states(mpc, cfg.n_traj, seed)?;
            for x in starts.iter().take(cfg.warmup) {
                let _ = policy.act(x);
            }
            for (j, x0) in starts.iter().enumerate() {
                let mut proc = DisturbanceProcess::new(d_set, cfg.alpha, disturbance_seed(seed, j))?;
                let r = run_closed_loop(*policy, mpc, x0, cfg.steps, &mut proc, true);
                let mean_action_seconds = if r.solve_seconds.is_empty() {
                    f64::NAN
                } else {
                    r.solve_seconds.iter().sum::<f64>() / r.solve_seconds.len() as f64
                };
                if let Some(f) = &r.failure {
                    log::warn!("{name} seed {seed} trajectory {j}: {f}");
                }
                rows.push(BenchRow {
                    policy: name.clone(),
                    seed,
                    trajectory: j,
                    trajectory_cost: r.cost,
                    mean_action_seconds,
                    violations: r.violations,
                    delta_open_loop: delta,
                    failure: r.failure,
                });
            }
        }
    }
    Ok(BenchmarkTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_zero_is_iid_uniform() {
        let d = Polytope::hypercube(2, 0.1);
        let mut a = DisturbanceProcess::new(&d, 0.0, 7).unwrap();
        let mut s = UniformSampler::new(&d, 7).unwrap();
        for _ in 0..50 {
            assert_eq!(a.step().unwrap(), s.sample().unwrap());
        }
    }

    #[test]
    fn slow_process_moves_little() {
        let d = Polytope::hypercube(3, 0.1);
        let mut p = DisturbanceProcess::new(&d, 0.999, 3).unwrap();
        let mut prev = p.current().clone();
        for _ in 0..1000 {
            let next = p.step().unwrap();
            // diameter of D in the max norm is 0.2
            assert!((&next - &prev).amax() <= 0.001 * 0.2 + 1e-15);
            prev = next;
        }
    }

    #[test]
    fn bad_alpha_rejected() {
        let d = Polytope::hypercube(1, 1.0);
        assert!(DisturbanceProcess::new(&d, 1.0, 0).is_err());
        assert!(DisturbanceProcess::new(&d, -0.1, 0).is_err());
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.25), 2.0);
        assert_eq!(quantile(&[1.0, 2.0], 0.5), 1.5);
        assert!(quantile(&[], 0.5).is_nan());
    }
}
