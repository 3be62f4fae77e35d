#![allow(dead_code)]

use gaugempc::config::SystemConfig;
use gaugempc::mpc::{CondensedMpc, LinearSystem};
use gaugempc::phase1::{AffinePhaseOne, PhaseOne};
use gaugempc::polytope::Polytope;
use gaugempc::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub struct Bench {
    pub sys: LinearSystem,
    pub mpc: CondensedMpc,
    pub law: AffinePhaseOne,
    pub phase1: PhaseOne,
}

/// The bundled three-state system with the law from its config file.
pub fn bench() -> Bench {
    let cfg = SystemConfig::bundled();
    let sys = cfg.system().unwrap();
    let mpc = cfg.mpc().unwrap();
    let l = cfg.phase1.clone().unwrap();
    let law = AffinePhaseOne::from_law(&sys, l.gain, l.offset).unwrap();
    Bench {
        sys,
        mpc,
        phase1: PhaseOne::Affine(law.clone()),
        law,
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

pub fn normal_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// Bounded polytope with the origin inside: random rows with offsets in
/// [0.5, 2] plus a loose box.
pub fn random_cset(rng: &mut ChaCha8Rng, dim: usize) -> Polytope {
    let k = rng.random_range(dim + 1..=3 * dim);
    let mut rows = normal_mat(rng, k, dim);
    for mut r in rows.row_iter_mut() {
        let n = r.norm();
        r /= n;
    }
    let mut g = DVector::from_fn(k, |_, _| rng.random_range(0.5..2.0));
    let boxed = Polytope::hypercube(dim, 10.0);
    rows = DMatrix::from_fn(k + 2 * dim, dim, |i, j| if i < k { rows[(i, j)] } else { boxed.f()[(i - k, j)] });
    g = DVector::from_fn(k + 2 * dim, |i, _| if i < k { g[i] } else { boxed.g()[i - k] });
    Polytope::new(rows, g).unwrap()
}

pub fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}
