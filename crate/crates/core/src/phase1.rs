//! Strictly feasible points of `F(x₀)`: the one-step max-violation LP, affine
//! Phase I synthesis by polytope containment, and the horizon rollout.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{serde_rows, serde_vec, vconcat, vstack};
use crate::mpc::{CondensedMpc, LinearSystem};
use crate::optim::{solve_lp, LpProblem, SolveStatus};
use crate::{Error, Result};

/// A certificate is accepted as strictly negative below this value.
pub const STRICT_TOL: f64 = 1e-9;
const LP_TOL: f64 = 1e-9;

/// `π₀(x) = Wx + w`, with `margin` the certified worst-case max-violation
/// over the RCI set (negative).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinePhaseOne {
    #[serde(rename = "W", with = "serde_rows")]
    pub gain: DMatrix<f64>,
    #[serde(rename = "w", with = "serde_vec")]
    pub offset: DVector<f64>,
    pub margin: f64,
}

impl AffinePhaseOne {
    /// Certifies a given law over `S` exactly, with one support function per
    /// constraint row.
    pub fn from_law(sys: &LinearSystem, gain: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        if gain.shape() != (sys.m(), sys.n()) || offset.len() != sys.m() {
            return Err(Error::Dimension("affine law has the wrong shape".into()));
        }
        let (c, d) = law_constraints(sys, &gain, &offset);
        let mut margin = f64::NEG_INFINITY;
        for i in 0..c.nrows() {
            let h = sys.rci_set().support(&c.row(i).transpose())?;
            margin = margin.max(h - d[i]);
        }
        Ok(Self {
            gain,
            offset,
            margin,
        })
    }

    pub fn action(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.gain * x + &self.offset
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// `C x ≤ d` describing where `Wx + w` is safe with zero slack:
/// `F_T(A + BW)x ≤ g̃ − F_T B w` and `F_U W x ≤ g_U − F_U w`.
fn law_constraints(
    sys: &LinearSystem,
    gain: &DMatrix<f64>,
    offset: &DVector<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let t = sys.target_set();
    let u = sys.input_set();
    let closed = sys.a() + sys.b() * gain;
    let c = vstack(&[&(t.f() * closed), &(u.f() * gain)]);
    let d = vconcat(&[&(t.g() - t.f() * (sys.b() * offset)), &(u.g() - u.f() * offset)]);
    (c, d)
}

/// Max-violation of the one-step constraints at `(x, u)`:
/// `max(F_T(Ax + Bu) − g̃, F_U u − g_U)`.
pub fn max_violation_at(sys: &LinearSystem, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
    let t = sys.target_set();
    let next = sys.step(x, u);
    let vs = (t.f() * next - t.g()).max();
    let vu = (sys.input_set().f() * u - sys.input_set().g()).max();
    vs.max(vu)
}

/// `min s` over `(u, s)` with `F_T(Ax₀ + Bu) ≤ g̃ + s·1`, `F_U u ≤ g_U + s·1`.
pub fn max_violation_lp(sys: &LinearSystem, x0: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    if x0.len() != sys.n() {
        return Err(Error::Dimension("state has the wrong length".into()));
    }
    let m = sys.m();
    let t = sys.target_set();
    let u = sys.input_set();
    let (kt, ku) = (t.n_rows(), u.n_rows());
    let mut g = DMatrix::zeros(kt + ku, m + 1);
    g.view_mut((0, 0), (kt, m)).copy_from(&(t.f() * sys.b()));
    g.view_mut((kt, 0), (ku, m)).copy_from(u.f());
    g.column_mut(m).fill(-1.0);
    let h = vconcat(&[&(t.g() - t.f() * (sys.a() * x0)), u.g()]);
    let mut c = DVector::zeros(m + 1);
    c[m] = 1.0;
    let r = solve_lp(&LpProblem::new(c, g, h)?, LP_TOL);
    match r.status {
        SolveStatus::Optimal => Ok((r.solution.rows(0, m).into_owned(), r.solution[m])),
        status => Err(Error::solver(status, "max-violation LP")),
    }
}

/// Finds `(W, w)` minimizing the worst-case max-violation over `S`.
///
/// Containment `S ⊆ {x | C(W)x ≤ d(w) + s}` is encoded with a multiplier
/// matrix `Λ ≥ 0`: `Λ F_S = C(W)` and `Λ g_S ≤ d(w) + s`.
pub fn synthesize_affine(sys: &LinearSystem) -> Result<AffinePhaseOne> {
    let (n, m) = (sys.n(), sys.m());
    let s_set = sys.rci_set();
    let t = sys.target_set();
    let u = sys.input_set();
    let (kt, ku, ks) = (t.n_rows(), u.n_rows(), s_set.n_rows());
    let kc = kt + ku;

    // Variable layout: vec(W) row-major (m·n), w (m), s (1), Λ row-major (kc·ks).
    let iw = |i: usize, j: usize| i * n + j;
    let io = |i: usize| m * n + i;
    let is = m * n + m;
    let il = |r: usize, k: usize| m * n + m + 1 + r * ks + k;
    let nv = m * n + m + 1 + kc * ks;

    let ft_b = t.f() * sys.b();
    let ft_a = t.f() * sys.a();

    // Λ F_S − C(W) = [F_T A; 0], one equation per (row r, column j).
    let mut aeq = DMatrix::zeros(kc * n, nv);
    let mut beq = DVector::zeros(kc * n);
    for r in 0..kc {
        for j in 0..n {
            let e = r * n + j;
            for k in 0..ks {
                aeq[(e, il(r, k))] = s_set.f()[(k, j)];
            }
            // C row r, column j: (F_T B W)_{rj} or (F_U W)_{rj}.
            for i in 0..m {
                let coef = if r < kt { ft_b[(r, i)] } else { u.f()[(r - kt, i)] };
                aeq[(e, iw(i, j))] -= coef;
            }
            if r < kt {
                beq[e] = ft_a[(r, j)];
            }
        }
    }

    // Λ g_S + (F w)_r − s ≤ g_r and −Λ ≤ 0.
    let mut g = DMatrix::zeros(kc + kc * ks, nv);
    let mut h = DVector::zeros(kc + kc * ks);
    for r in 0..kc {
        for k in 0..ks {
            g[(r, il(r, k))] = s_set.g()[k];
        }
        for i in 0..m {
            g[(r, io(i))] = if r < kt { ft_b[(r, i)] } else { u.f()[(r - kt, i)] };
        }
        g[(r, is)] = -1.0;
        h[r] = if r < kt { t.g()[r] } else { u.g()[r - kt] };
    }
    for r in 0..kc {
        for k in 0..ks {
            g[(kc + r * ks + k, il(r, k))] = -1.0;
        }
    }
    let mut c = DVector::zeros(nv);
    c[is] = 1.0;

    let lp = LpProblem::new(c, g, h)?.with_equalities(aeq, beq)?;
    let r = solve_lp(&lp, LP_TOL);
    match r.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => return Err(Error::PhaseOneInfeasible { best: f64::INFINITY }),
        status => return Err(Error::solver(status, "affine Phase I synthesis")),
    }
    let x = &r.solution;
    let gain = DMatrix::from_fn(m, n, |i, j| x[iw(i, j)]);
    let offset = DVector::from_fn(m, |i, _| x[io(i)]);
    // Re-certify exactly; the LP value only bounds the margin from above.
    let p1 = AffinePhaseOne::from_law(sys, gain, offset)?;
    if p1.margin > -STRICT_TOL {
        return Err(Error::PhaseOneInfeasible { best: p1.margin });
    }
    log::info!("affine Phase I: LP value {:.6e}, certified margin {:.6e}", x[is], p1.margin);
    Ok(p1)
}

/// A strictly feasible input sequence and its constraint slacks.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseOneResult {
    /// `μ₀(x₀) ∈ R^{mτ}`.
    pub inputs: DVector<f64>,
    /// `b(x₀) − A_F μ₀`, one entry per row of `F(x₀)`.
    pub slack: DVector<f64>,
    pub margin: f64,
}

fn finish(mpc: &CondensedMpc, x0: &DVector<f64>, inputs: DVector<f64>) -> Result<PhaseOneResult> {
    let slack = mpc.constraint_rhs(x0) - mpc.constraint_matrix() * &inputs;
    let margin = slack.min();
    if !(margin > STRICT_TOL) {
        return Err(Error::MarginViolation(margin));
    }
    Ok(PhaseOneResult {
        inputs,
        slack,
        margin,
    })
}

fn check_in_s(mpc: &CondensedMpc, x0: &DVector<f64>) -> Result<()> {
    if x0.len() != mpc.n() {
        return Err(Error::Dimension("state has the wrong length".into()));
    }
    let viol = mpc.system().rci_set().max_residual(x0);
    if viol > STRICT_TOL {
        return Err(Error::InvalidInput(format!("x0 lies outside S by {viol:.3e}")));
    }
    Ok(())
}

/// `μ₀(x₀) = [π₀(x₀); π₀(x₁); …; π₀(x_{τ−1})]` along the nominal rollout.
pub fn rollout_phase1(mpc: &CondensedMpc, p1: &AffinePhaseOne, x0: &DVector<f64>) -> Result<PhaseOneResult> {
    check_in_s(mpc, x0)?;
    let m = mpc.m();
    let sys = mpc.system();
    let mut inputs = DVector::zeros(mpc.n_inputs());
    let mut x = x0.clone();
    for k in 0..mpc.horizon() {
        let u = p1.action(&x);
        x = sys.step(&x, &u);
        inputs.rows_mut(k * m, m).copy_from(&u);
    }
    finish(mpc, x0, inputs)
}

/// Per-step max-violation LPs along the nominal rollout.
pub fn phase1_fallback_lp(mpc: &CondensedMpc, x0: &DVector<f64>) -> Result<PhaseOneResult> {
    check_in_s(mpc, x0)?;
    let m = mpc.m();
    let sys = mpc.system();
    let mut inputs = DVector::zeros(mpc.n_inputs());
    let mut x = x0.clone();
    for k in 0..mpc.horizon() {
        let (u, s) = max_violation_lp(sys, &x)?;
        if s > -STRICT_TOL {
            return Err(Error::PhaseOneInfeasible { best: s });
        }
        x = sys.step(&x, &u);
        inputs.rows_mut(k * m, m).copy_from(&u);
    }
    finish(mpc, x0, inputs)
}

/// Source of interior points used by the safe policy.
#[derive(Debug, Clone, PartialEq)]
pub enum PhaseOne {
    Affine(AffinePhaseOne),
    Lp,
}

impl PhaseOne {
    pub fn interior_point(&self, mpc: &CondensedMpc, x0: &DVector<f64>) -> Result<PhaseOneResult> {
        match self {
            PhaseOne::Affine(p1) => rollout_phase1(mpc, p1, x0),
            PhaseOne::Lp => phase1_fallback_lp(mpc, x0),
        }
    }

    /// Affine synthesis, falling back to per-state LPs when no affine law
    /// exists.
    pub fn synthesize(sys: &LinearSystem) -> Result<Self> {
        match synthesize_affine(sys) {
            Ok(p1) => Ok(PhaseOne::Affine(p1)),
            Err(Error::PhaseOneInfeasible { best }) => {
                log::warn!("no affine Phase I law (best {best:.3e}); using per-state LPs");
                Ok(PhaseOne::Lp)
            }
            Err(e) => Err(e),
        }
    }
}
