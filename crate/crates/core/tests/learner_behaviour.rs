mod common;

use common::bench;
use gaugempc::learner::{
    batch_objective, penalty_term, train, train_with_validation, Head, Mlp, NeuralPolicy, PolicyKind, TrainConfig,
    ValidationSet,
};
use gaugempc::gauge_policy::Squash;
use gaugempc::mpc::{CondensedMpc, LinearSystem};
use gaugempc::polytope::{Polytope, UniformSampler};
use gaugempc::{DMatrix, DVector, Error};

fn small(kind: PolicyKind, iterations: usize) -> TrainConfig {
    TrainConfig {
        width: 16,
        batch_size: 16,
        iterations,
        n_val: 10,
        validate_every: 5,
        ..TrainConfig::desk(kind)
    }
}

#[test]
fn first_recorded_loss_is_the_objective_of_the_first_batch() {
    let b = bench();
    for kind in [PolicyKind::Gauge, PolicyKind::Penalty] {
        let cfg = small(kind, 1);
        let out = train(&b.mpc, Some(&b.phase1), &cfg).unwrap();

        let mlp = Mlp::two_hidden(3, cfg.width, b.mpc.n_inputs(), cfg.seed).unwrap();
        let head = Head::new(kind, &b.mpc, Some(&b.phase1), cfg.squash).unwrap();
        let net = NeuralPolicy::new(mlp, head, &b.mpc).unwrap();
        let states = UniformSampler::new(b.sys.rci_set(), cfg.seed + 1)
            .unwrap()
            .sample_n(cfg.batch_size)
            .unwrap();
        let mut by_hand = 0.0;
        for x0 in &states {
            let u = net.plan(&b.mpc, x0).unwrap();
            by_hand += b.mpc.trajectory_cost(x0, &u);
            if kind == PolicyKind::Penalty {
                by_hand += penalty_term(&b.mpc, x0, &u, cfg.beta).0;
            }
        }
        by_hand /= states.len() as f64;
        let recorded = out.trace.loss[0];
        assert!((recorded - by_hand).abs() <= 1e-12 * by_hand, "{kind}: {recorded} vs {by_hand}");
    }
}

#[test]
fn zero_beta_penalty_loss_is_the_cost() {
    let b = bench();
    let cfg = TrainConfig {
        beta: 0.0,
        ..small(PolicyKind::Penalty, 20)
    };
    let out = train(&b.mpc, None, &cfg).unwrap();
    assert_eq!(out.trace.loss, out.trace.cost);
}

#[test]
fn penalty_charges_beta_per_unit_violation() {
    // x₁ = x₀ + u with S = T = [-1, 1]; u = 1.2 overshoots by 0.2
    let s = Polytope::hypercube(1, 1.0);
    let sys = LinearSystem::new(
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 1.0),
        s.clone(),
        Polytope::hypercube(1, 2.0),
        Polytope::hypercube(1, 0.0),
        s,
    )
    .unwrap();
    let mpc = CondensedMpc::quadratic(&sys, 1, 1.0, 1.0).unwrap();
    let (p, g) = penalty_term(&mpc, &DVector::zeros(1), &DVector::from_element(1, 1.2), 10.0);
    assert!((p - 2.0).abs() < 1e-12);
    assert!((g[0] - 10.0).abs() < 1e-12);
    let (p, _) = penalty_term(&mpc, &DVector::zeros(1), &DVector::from_element(1, 0.9), 10.0);
    assert_eq!(p, 0.0);
}

#[test]
fn penalty_outputs_can_leave_the_feasible_set() {
    // a network pinned at the corner of U^τ
    let b = bench();
    let mut mlp = Mlp::two_hidden(3, 8, b.mpc.n_inputs(), 0).unwrap();
    let last = mlp.layers.last_mut().unwrap();
    last.weight.fill(0.0);
    last.bias.fill(20.0);
    let head = Head::new(PolicyKind::Penalty, &b.mpc, None, Squash::Tanh).unwrap();
    let net = NeuralPolicy::new(mlp, head, &b.mpc).unwrap();
    let states = b.sys.rci_set().sample_uniform(200, 1).unwrap();
    let violating = states
        .iter()
        .filter(|x| b.mpc.max_residual(x, &net.plan(&b.mpc, x).unwrap()) > 1e-7)
        .count();
    assert!(violating > 0);
}

#[test]
fn training_is_deterministic_in_the_seed() {
    let b = bench();
    for kind in [PolicyKind::Gauge, PolicyKind::Penalty, PolicyKind::Projection] {
        let cfg = small(kind, 10);
        let one = train(&b.mpc, Some(&b.phase1), &cfg).unwrap();
        let two = train(&b.mpc, Some(&b.phase1), &cfg).unwrap();
        assert_eq!(one.trace.loss, two.trace.loss);
        assert_eq!(one.trace.checkpoints, two.trace.checkpoints);
        assert_eq!(one.trace.to_csv(), two.trace.to_csv());
        assert_eq!(one.policy.mlp, two.policy.mlp);
        let other = train(&b.mpc, Some(&b.phase1), &TrainConfig { seed: 7, ..cfg }).unwrap();
        assert_ne!(one.trace.loss, other.trace.loss);
    }
}

#[test]
fn gauge_training_passes_every_safety_check() {
    let b = bench();
    let cfg = TrainConfig {
        safety_check_every: 1,
        lr: 1e-2,
        ..small(PolicyKind::Gauge, 60)
    };
    let out = train(&b.mpc, Some(&b.phase1), &cfg).unwrap();
    assert!(out.trace.loss.iter().all(|l| l.is_finite()));
}

#[test]
fn training_improves_on_the_untrained_network() {
    let b = bench();
    let val = ValidationSet::new(&b.mpc, 20, 3).unwrap();
    for kind in [PolicyKind::Gauge, PolicyKind::Penalty] {
        let cfg = TrainConfig {
            width: 32,
            batch_size: 32,
            iterations: 150,
            validate_every: 25,
            ..TrainConfig::desk(kind)
        };
        let out = train_with_validation(&b.mpc, Some(&b.phase1), &cfg, &val).unwrap();
        let untrained = out.trace.checkpoints[0].1;
        assert!(out.trace.best_delta < untrained, "{kind}: {} vs {untrained}", out.trace.best_delta);
        assert!(out.trace.loss_at(150, 25) < out.trace.loss_at(25, 25));
    }
}

#[test]
fn oracle_plan_has_zero_suboptimality() {
    let b = bench();
    let val = ValidationSet::new(&b.mpc, 20, 4).unwrap();
    let delta = val
        .delta_with(&b.mpc, |x0| Ok(b.mpc.solve_oracle(x0, 1e-8)?.inputs))
        .unwrap();
    assert!(delta.abs() < 1e-12, "{delta:e}");
}

#[test]
fn gauge_without_phase_one_is_rejected() {
    let b = bench();
    let err = train(&b.mpc, None, &small(PolicyKind::Gauge, 1)).unwrap_err();
    assert!(matches!(err, Error::InvalidInput(_)));
}

#[test]
fn batch_objective_outputs_match_plans() {
    let b = bench();
    let mlp = Mlp::two_hidden(3, 8, b.mpc.n_inputs(), 2).unwrap();
    let head = Head::new(PolicyKind::Gauge, &b.mpc, Some(&b.phase1), Squash::Tanh).unwrap();
    let net = NeuralPolicy::new(mlp, head, &b.mpc).unwrap();
    let states = b.sys.rci_set().sample_uniform(8, 2).unwrap();
    let obj = batch_objective(&net, &b.mpc, &states, 0.0).unwrap();
    for (x0, u) in states.iter().zip(&obj.outputs) {
        assert!((net.plan(&b.mpc, x0).unwrap() - u).amax() < 1e-12);
    }
}
