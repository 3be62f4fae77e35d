mod common;

use common::bench;
use gaugempc::config::SystemConfig;
use gaugempc::evalsim::{benchmark_suite, run_closed_loop, BenchConfig, DisturbanceProcess};
use gaugempc::gauge_policy::Squash;
use gaugempc::learner::{Head, Mlp, NeuralPolicy, PolicyKind};
use gaugempc::mpc::CondensedMpc;
use gaugempc::policy::{ControlPolicy, NeuralController, OracleController, PhaseOneController};
use gaugempc::polytope::Polytope;
use gaugempc::{DVector, Result};

fn untrained_gauge(b: &common::Bench) -> NeuralPolicy {
    let mlp = Mlp::two_hidden(3, 32, 10, 0).unwrap();
    let head = Head::new(PolicyKind::Gauge, &b.mpc, Some(&b.phase1), Squash::Tanh).unwrap();
    NeuralPolicy::new(mlp, head, &b.mpc).unwrap()
}

#[test]
fn disturbances_stay_in_their_set() {
    let b = bench();
    let d = b.sys.disturbance_set();
    let mut proc = DisturbanceProcess::new(d, 0.9, 1).unwrap();
    for _ in 0..10_000 {
        let v = proc.step().unwrap();
        assert!(v.amax() <= 0.1 + 1e-12);
    }
}

#[test]
fn undisturbed_oracle_stays_in_the_target_set() {
    let mut cfg = SystemConfig::bundled();
    cfg.sets.disturbance = Polytope::hypercube(3, 0.0);
    let sys = cfg.system().unwrap();
    let mpc = cfg.mpc().unwrap();
    let oracle = OracleController::new(&mpc);
    for (i, x0) in sys.rci_set().sample_uniform(10, 2).unwrap().iter().enumerate() {
        let mut proc = DisturbanceProcess::new(sys.disturbance_set(), 0.9, i as u64).unwrap();
        let r = run_closed_loop(&oracle, &mpc, x0, 20, &mut proc, false);
        assert!(!r.failed());
        for x in &r.states[1..] {
            assert!(sys.target_set().max_residual(x) <= 1e-7);
        }
    }
}

#[test]
fn zero_steps_cost_the_terminal_term() {
    let b = bench();
    let x0 = DVector::from_row_slice(&[0.5, -0.2, 0.1]);
    let mut proc = DisturbanceProcess::new(b.sys.disturbance_set(), 0.9, 0).unwrap();
    let p1 = PhaseOneController {
        mpc: &b.mpc,
        phase1: &b.phase1,
    };
    let r = run_closed_loop(&p1, &b.mpc, &x0, 0, &mut proc, false);
    assert_eq!(r.cost, b.mpc.cost().terminal(&x0));
    assert_eq!(r.states.len(), 1);
}

#[test]
fn untrained_gauge_policy_never_leaves_s() {
    let b = bench();
    let net = untrained_gauge(&b);
    let ctl = NeuralController { net: &net, mpc: &b.mpc };
    for (j, x0) in b.sys.rci_set().sample_uniform(100, 8).unwrap().iter().enumerate() {
        let mut proc = DisturbanceProcess::new(b.sys.disturbance_set(), 0.9, j as u64).unwrap();
        let r = run_closed_loop(&ctl, &b.mpc, x0, 50, &mut proc, false);
        assert!(!r.failed(), "{:?}", r.failure);
        assert_eq!(r.violations, 0);
        assert_eq!(r.states.len(), 51);
    }
}

#[test]
fn benchmark_rows_and_csv_are_reproducible() {
    let b = bench();
    let net = untrained_gauge(&b);
    let gauge = NeuralController { net: &net, mpc: &b.mpc };
    let p1 = PhaseOneController {
        mpc: &b.mpc,
        phase1: &b.phase1,
    };
    let cfg = BenchConfig {
        n_traj: 5,
        steps: 10,
        seeds: vec![3],
        warmup: 1,
        ..BenchConfig::default()
    };
    let policies: [&dyn ControlPolicy; 2] = [&gauge, &p1];
    let one = benchmark_suite(&policies, &b.mpc, None, &cfg).unwrap();
    let two = benchmark_suite(&policies, &b.mpc, None, &cfg).unwrap();
    assert_eq!(one.rows.len(), 10);
    assert_eq!(one.to_csv(), two.to_csv());
    assert_eq!(one.policies(), vec!["gauge".to_string(), "phase1".to_string()]);
    // common random numbers: equal policies see equal trajectories
    let twice: [&dyn ControlPolicy; 2] = [&p1, &p1];
    let same = benchmark_suite(&twice, &b.mpc, None, &cfg).unwrap();
    for j in 0..5 {
        assert_eq!(same.rows[j].trajectory_cost, same.rows[j + 5].trajectory_cost);
    }
}

/// Applies the corner of U regardless of the state.
struct Push(usize);

impl ControlPolicy for Push {
    fn name(&self) -> String {
        "push".into()
    }

    fn plan(&self, _: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_element(self.0, 1.0))
    }

    fn input_dim(&self) -> usize {
        2
    }
}

#[test]
fn violations_of_an_unsafe_policy_are_counted() {
    let b = bench();
    let push = Push(b.mpc.n_inputs());
    let mut total = 0;
    for (j, x0) in b.sys.rci_set().sample_uniform(20, 9).unwrap().iter().enumerate() {
        let mut proc = DisturbanceProcess::new(b.sys.disturbance_set(), 0.5, j as u64).unwrap();
        let r = run_closed_loop(&push, &b.mpc, x0, 30, &mut proc, false);
        let outside = r.states.iter().filter(|x| b.sys.rci_set().max_residual(x) > 1e-7).count();
        assert_eq!(r.violations, outside);
        total += r.violations;
    }
    assert!(total > 0);
}

#[test]
fn oracle_and_condensed_cost_agree_without_disturbance() {
    // with D = {0} the closed loop over τ steps of an open-loop plan is the
    // nominal rollout
    let mut cfg = SystemConfig::bundled();
    cfg.sets.disturbance = Polytope::hypercube(3, 0.0);
    let mpc: CondensedMpc = cfg.mpc().unwrap();
    let x0 = DVector::from_row_slice(&[1.0, 0.5, -0.5]);
    let plan = mpc.solve_oracle(&x0, 1e-9).unwrap().inputs;
    let mut x = x0.clone();
    let mut cost = 0.0;
    for k in 0..mpc.horizon() {
        let u = plan.rows(2 * k, 2).into_owned();
        cost += mpc.cost().stage(&x, &u);
        x = mpc.system().step(&x, &u);
    }
    cost += mpc.cost().terminal(&x);
    assert!((cost - mpc.trajectory_cost(&x0, &plan)).abs() < 1e-12 * cost);
}
