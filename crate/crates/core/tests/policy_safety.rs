mod common;

use common::{bench, normal_vec, rng};
use gaugempc::gauge_policy::{extract_first_action, GaugeHead, GaugePolicy, Squash};
use gaugempc::learner::Mlp;
use gaugempc::DVector;
use proptest::prelude::*;
use rand::Rng;

/// Width-16 network whose parameter vector has the given norm.
fn network_with_norm(seed: u64, norm: f64) -> Mlp {
    let mut mlp = Mlp::two_hidden(3, 16, 10, seed).unwrap();
    let mut r = rng(seed);
    let dir = normal_vec(&mut r, mlp.n_params());
    let theta = dir.normalize() * norm;
    mlp.set_flat(theta.as_slice()).unwrap();
    mlp
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn any_parameters_give_feasible_plans(seed in any::<u64>(), log_norm in -1.0f64..3.0, clamp in any::<bool>()) {
        let b = bench();
        let squash = if clamp { Squash::Clamp } else { Squash::Tanh };
        let policy = GaugePolicy::new(&b.mpc, network_with_norm(seed, 10f64.powf(log_norm)), b.phase1.clone(), squash).unwrap();
        for x0 in b.sys.rci_set().sample_uniform(20, seed).unwrap() {
            let (u, _) = policy.policy_forward(&b.mpc, &x0).unwrap();
            prop_assert!(b.mpc.max_residual(&x0, &u) <= 1e-7);
            let first = extract_first_action(&u, 2).unwrap();
            prop_assert!(b.sys.input_set().max_residual(&first) <= 1e-7);
            prop_assert!(b.sys.target_set().max_residual(&b.sys.step(&x0, &first)) <= 1e-7);
        }
    }
}

#[test]
fn zero_output_returns_the_phase_one_point() {
    let b = bench();
    let head = GaugeHead::new(&b.mpc, b.phase1.clone(), Squash::Tanh);
    for x0 in b.sys.rci_set().sample_uniform(50, 3).unwrap() {
        let (u, _) = head.forward(&b.mpc, &x0, DVector::zeros(10)).unwrap();
        let mu0 = b.phase1.interior_point(&b.mpc, &x0).unwrap().inputs;
        assert_eq!(u, mu0);
    }
}

#[test]
fn saturated_clamp_lands_on_the_boundary() {
    let b = bench();
    let head = GaugeHead::new(&b.mpc, b.phase1.clone(), Squash::Clamp);
    let mut r = rng(4);
    for x0 in b.sys.rci_set().sample_uniform(50, 4).unwrap() {
        // one coordinate saturated puts ψ on the boundary of the cube
        let mut raw = normal_vec(&mut r, 10) * 0.3;
        raw[r.random_range(0..10)] = 5.0;
        let (u, _) = head.forward(&b.mpc, &x0, raw).unwrap();
        assert!(b.mpc.max_residual(&x0, &u).abs() < 1e-9);
    }
}

#[test]
fn forward_is_deterministic() {
    let b = bench();
    let policy = GaugePolicy::new(&b.mpc, network_with_norm(1, 5.0), b.phase1.clone(), Squash::Tanh).unwrap();
    for x0 in b.sys.rci_set().sample_uniform(20, 5).unwrap() {
        let one = policy.policy_forward(&b.mpc, &x0).unwrap().0;
        let two = policy.policy_forward(&b.mpc, &x0).unwrap().0;
        assert_eq!(one, two);
    }
}

#[test]
fn lp_phase_one_is_safe_too() {
    let b = bench();
    let policy = GaugePolicy::new(&b.mpc, network_with_norm(2, 50.0), gaugempc::phase1::PhaseOne::Lp, Squash::Tanh).unwrap();
    for x0 in b.sys.rci_set().sample_uniform(50, 6).unwrap() {
        let (u, _) = policy.policy_forward(&b.mpc, &x0).unwrap();
        assert!(b.mpc.max_residual(&x0, &u) <= 1e-7);
    }
}
