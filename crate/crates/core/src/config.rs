//! System definition files (TOML).

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{serde_rows, serde_vec};
use crate::mpc::{CondensedMpc, LinearSystem};
use crate::polytope::{rci_iterate, Polytope, RciOptions};
use crate::{Error, Result};

/// The bundled three-state example system.
pub const ZEILINGER3: &str = include_str!("../examples/zeilinger3.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub name: String,
    pub horizon: usize,
    #[serde(default = "one")]
    pub c1: f64,
    #[serde(default = "one")]
    pub c2: f64,
    #[serde(default)]
    pub seed: u64,
    pub dynamics: Dynamics,
    pub sets: Sets,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase1: Option<AffineLaw>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dynamics {
    #[serde(rename = "A", with = "serde_rows")]
    pub a: DMatrix<f64>,
    #[serde(rename = "B", with = "serde_rows")]
    pub b: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sets {
    pub state: Polytope,
    pub input: Polytope,
    pub disturbance: Polytope,
    /// Computed by backward reachability when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rci: Option<Polytope>,
}

/// A known affine Phase I law `u = Wx + w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineLaw {
    #[serde(rename = "W", with = "serde_rows")]
    pub gain: DMatrix<f64>,
    #[serde(rename = "w", with = "serde_vec")]
    pub offset: DVector<f64>,
}

impl SystemConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn bundled() -> Self {
        Self::from_toml_str(ZEILINGER3).expect("bundled system parses")
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidInput("horizon must be at least 1".into()));
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0 && self.c1.is_finite() && self.c2.is_finite()) {
            return Err(Error::InvalidInput("cost weights must be positive".into()));
        }
        Ok(())
    }

    /// The RCI set from the file, or the maximal one computed on the fly.
    pub fn rci_set(&self) -> Result<Polytope> {
        if let Some(s) = &self.sets.rci {
            return Ok(s.clone());
        }
        let r = rci_iterate(
            &self.sets.state,
            &self.sets.input,
            &self.sets.disturbance,
            &self.dynamics.a,
            &self.dynamics.b,
            &RciOptions::default(),
        )?;
        if !r.certified {
            log::warn!("RCI iteration stopped before reaching a fixed point");
        }
        Ok(r.set)
    }

    pub fn system(&self) -> Result<LinearSystem> {
        LinearSystem::new(
            self.dynamics.a.clone(),
            self.dynamics.b.clone(),
            self.sets.state.clone(),
            self.sets.input.clone(),
            self.sets.disturbance.clone(),
            self.rci_set()?,
        )
    }

    pub fn mpc(&self) -> Result<CondensedMpc> {
        CondensedMpc::quadratic(&self.system()?, self.horizon, self.c1, self.c2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_round_trip() {
        let cfg = SystemConfig::bundled();
        let again = SystemConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn bundled_system_is_consistent() {
        let cfg = SystemConfig::bundled();
        let sys = cfg.system().unwrap();
        assert_eq!((sys.n(), sys.m()), (3, 2));
        assert_eq!(cfg.horizon, 5);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("{}\nbogus = 1\n", ZEILINGER3.replacen("name", "extra = 2\nname", 1));
        assert!(matches!(SystemConfig::from_toml_str(&text), Err(Error::Parse(_))));
    }

    #[test]
    fn zero_horizon_rejected() {
        let text = ZEILINGER3.replacen("horizon = 5", "horizon = 0", 1);
        assert!(matches!(SystemConfig::from_toml_str(&text), Err(Error::InvalidInput(_))));
    }
}
