//! Random search over width, batch size and learning rate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{train_with_validation, TrainConfig, ValidationSet};
use crate::mpc::CondensedMpc;
use crate::phase1::PhaseOne;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub width: (usize, usize),
    pub batch_size: (usize, usize),
    /// Sampled log-uniformly.
    pub lr: (f64, f64),
    pub trials: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            width: (64, 1024),
            batch_size: (100, 3000),
            lr: (1e-5, 1e-3),
            trials: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub config: TrainConfig,
    /// Best validation δ, or `None` when training failed.
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Trains one network per sampled configuration; `base` supplies everything
/// that is not searched over.
pub fn random_search(
    mpc: &CondensedMpc,
    phase1: Option<&PhaseOne>,
    base: &TrainConfig,
    space: &SearchSpace,
    seed: u64,
    val: &ValidationSet,
) -> Result<Vec<Trial>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials = Vec::with_capacity(space.trials);
    for k in 0..space.trials {
        let (lo, hi) = (space.lr.0.ln(), space.lr.1.ln());
        let config = TrainConfig {
            width: rng.random_range(space.width.0..=space.width.1),
            batch_size: rng.random_range(space.batch_size.0..=space.batch_size.1),
            lr: rng.random_range(lo..=hi).exp(),
            seed: base.seed.wrapping_add(k as u64),
            ..base.clone()
        };
        let trial = match train_with_validation(mpc, phase1, &config, val) {
            Ok(out) => Trial {
                config,
                delta: Some(out.trace.best_delta),
                error: None,
            },
            Err(e) => Trial {
                config,
                delta: None,
                error: Some(e.to_string()),
            },
        };
        log::info!("trial {k}: {:?}", trial.delta);
        trials.push(trial);
    }
    Ok(trials)
}

/// Trial with the smallest δ.
pub fn best(trials: &[Trial]) -> Option<&Trial> {
    trials
        .iter()
        .filter(|t| t.delta.is_some())
        .min_by(|a, b| a.delta.partial_cmp(&b.delta).expect("finite deltas"))
}
