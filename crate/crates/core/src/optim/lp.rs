use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::{SolveReport, SolveStatus};
use crate::linalg::norm_inf;
use crate::{Error, Result};

/// `min cᵀx  s.t.  Gx ≤ h,  Aeq x = beq`.
#[derive(Debug, Clone)]
pub struct LpProblem {
    pub c: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub eq: Option<(DMatrix<f64>, DVector<f64>)>,
}

impl LpProblem {
    pub fn new(c: DVector<f64>, g: DMatrix<f64>, h: DVector<f64>) -> Result<Self> {
        if g.nrows() == 0 {
            return Err(Error::InvalidInput("LP needs at least one inequality".into()));
        }
        if g.ncols() != c.len() || g.nrows() != h.len() {
            return Err(Error::Dimension(format!(
                "LP with {} variables: G is {}x{}, h has {} entries",
                c.len(),
                g.nrows(),
                g.ncols(),
                h.len()
            )));
        }
        Ok(Self { c, g, h, eq: None })
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.ncols() != self.c.len() || a.nrows() != b.len() {
            return Err(Error::Dimension(format!(
                "equality block is {}x{} with {} right-hand sides for {} variables",
                a.nrows(),
                a.ncols(),
                b.len(),
                self.c.len()
            )));
        }
        if a.nrows() > 0 {
            self.eq = Some((a, b));
        }
        Ok(self)
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LpSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 200,
        }
    }
}

pub fn solve_lp(p: &LpProblem, tol: f64) -> SolveReport {
    solve_lp_with(
        p,
        &LpSettings {
            tol,
            ..Default::default()
        },
    )
}

/// Spread of the scaling `w` beyond which the normal equations lose the
/// directions of weakly weighted rows to cancellation.
const MAX_SCALING_SPREAD: f64 = 1e10;

type Lu = nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>;

enum Factor {
    /// `[GᵀWG Aᵀ; A 0]`, eliminating `dz`.
    Reduced(Lu),
    /// `[0 Aᵀ Gᵀ; A 0 0; G 0 -W⁻¹]`, regularized.
    Full(Lu),
}

/// KKT system of the embedding for one scaling `w = z / s`.
struct Kkt<'a> {
    g: &'a DMatrix<f64>,
    a: &'a DMatrix<f64>,
    w: DVector<f64>,
    factor: Factor,
}

impl<'a> Kkt<'a> {
    fn factor(g: &'a DMatrix<f64>, a: &'a DMatrix<f64>, w: DVector<f64>) -> Option<Self> {
        if w.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return None;
        }
        let spread = w.max() / w.min();
        let factor = if spread <= MAX_SCALING_SPREAD {
            Self::reduced(g, a, &w).or_else(|| Self::full(g, a, &w))
        } else {
            Self::full(g, a, &w)
        }?;
        Some(Self { g, a, w, factor })
    }

    fn reduced(g: &DMatrix<f64>, a: &DMatrix<f64>, w: &DVector<f64>) -> Option<Factor> {
        let n = g.ncols();
        let p = a.nrows();
        let mut gs = g.clone();
        for (i, mut row) in gs.row_iter_mut().enumerate() {
            row *= w[i].sqrt();
        }
        let m = gs.tr_mul(&gs);
        let mut reg = 1e-12;
        for _ in 0..3 {
            let mut k = DMatrix::zeros(n + p, n + p);
            k.view_mut((0, 0), (n, n)).copy_from(&m);
            for i in 0..n {
                k[(i, i)] += reg;
            }
            if p > 0 {
                k.view_mut((n, 0), (p, n)).copy_from(a);
                k.view_mut((0, n), (n, p)).copy_from(&a.transpose());
                for i in 0..p {
                    k[(n + i, n + i)] -= reg;
                }
            }
            let lu = k.lu();
            if lu.is_invertible() {
                return Some(Factor::Reduced(lu));
            }
            reg *= 1e4;
        }
        None
    }

    fn full(g: &DMatrix<f64>, a: &DMatrix<f64>, w: &DVector<f64>) -> Option<Factor> {
        let n = g.ncols();
        let p = a.nrows();
        let k = g.nrows();
        let mut reg = 1e-12;
        for _ in 0..3 {
            let mut m = DMatrix::zeros(n + p + k, n + p + k);
            for i in 0..n {
                m[(i, i)] = reg;
            }
            if p > 0 {
                m.view_mut((n, 0), (p, n)).copy_from(a);
                m.view_mut((0, n), (n, p)).copy_from(&a.transpose());
                for i in 0..p {
                    m[(n + i, n + i)] = -reg;
                }
            }
            m.view_mut((n + p, 0), (k, n)).copy_from(g);
            m.view_mut((0, n + p), (n, k)).copy_from(&g.transpose());
            for i in 0..k {
                m[(n + p + i, n + p + i)] = -1.0 / w[i] - reg;
            }
            let lu = m.lu();
            if lu.is_invertible() {
                return Some(Factor::Full(lu));
            }
            reg *= 1e4;
        }
        None
    }

    fn solve_once(
        &self,
        r1: &DVector<f64>,
        r2: &DVector<f64>,
        r3: &DVector<f64>,
    ) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        let n = self.g.ncols();
        let p = self.a.nrows();
        match &self.factor {
            Factor::Reduced(lu) => {
                let top = r1 + self.g.tr_mul(&self.w.component_mul(r3));
                let mut rhs = DVector::zeros(n + p);
                rhs.rows_mut(0, n).copy_from(&top);
                rhs.rows_mut(n, p).copy_from(r2);
                let sol = lu.solve(&rhs)?;
                let dx = sol.rows(0, n).into_owned();
                let dy = sol.rows(n, p).into_owned();
                let dz = self.w.component_mul(&(self.g * &dx - r3));
                Some((dx, dy, dz))
            }
            Factor::Full(lu) => {
                let sol = lu.solve(&crate::linalg::vconcat(&[r1, r2, r3]))?;
                let k = self.g.nrows();
                Some((
                    sol.rows(0, n).into_owned(),
                    sol.rows(n, p).into_owned(),
                    sol.rows(n + p, k).into_owned(),
                ))
            }
        }
    }

    /// Solves `[0 Aᵀ Gᵀ; A 0 0; G 0 -W⁻¹] [dx; dy; dz] = [r1; r2; r3]`
    /// with one step of iterative refinement on the unreduced system.
    fn solve(
        &self,
        r1: &DVector<f64>,
        r2: &DVector<f64>,
        r3: &DVector<f64>,
    ) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        let (mut dx, mut dy, mut dz) = self.solve_once(r1, r2, r3)?;
        for _ in 0..2 {
            let e1 = r1 - self.a.tr_mul(&dy) - self.g.tr_mul(&dz);
            let e2 = r2 - self.a * &dx;
            let e3 = r3 - (self.g * &dx - dz.component_div(&self.w));
            let scale = norm_inf(&e1).max(norm_inf(&e2)).max(norm_inf(&e3));
            if scale < 1e-14 {
                break;
            }
            let (cx, cy, cz) = self.solve_once(&e1, &e2, &e3)?;
            dx += cx;
            dy += cy;
            dz += cz;
        }
        let ok = [&dx, &dy, &dz]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()));
        ok.then_some((dx, dy, dz))
    }
}

fn shift_positive(v: &mut DVector<f64>) {
    let lo = v.min();
    if lo <= 0.0 {
        v.add_scalar_mut(1.0 - lo);
    }
}

fn max_step(pairs: &[(&DVector<f64>, &DVector<f64>)], scalars: &[(f64, f64)]) -> f64 {
    let mut alpha = 1.0f64;
    for (v, dv) in pairs {
        for (x, dx) in v.iter().zip(dv.iter()) {
            if *dx < 0.0 {
                alpha = alpha.min(-x / dx);
            }
        }
    }
    for (x, dx) in scalars {
        if *dx < 0.0 {
            alpha = alpha.min(-x / dx);
        }
    }
    alpha
}

/// Homogeneous self-dual interior-point method with Mehrotra corrections.
pub fn solve_lp_with(p: &LpProblem, settings: &LpSettings) -> SolveReport {
    let start = Instant::now();
    let tol = settings.tol;
    let n = p.num_vars();
    let k = p.h.len();
    let (a, b) = match &p.eq {
        Some((a, b)) => (a.clone(), b.clone()),
        None => (DMatrix::zeros(0, n), DVector::zeros(0)),
    };
    let (c, g, h) = (&p.c, &p.g, &p.h);

    let failed = |status: SolveStatus, iterations: usize| SolveReport {
        status,
        solution: DVector::zeros(n),
        objective: f64::NAN,
        dual: DVector::zeros(k),
        dual_eq: DVector::zeros(b.len()),
        primal_residual: f64::INFINITY,
        dual_residual: f64::INFINITY,
        iterations,
        wall_time: start.elapsed().as_secs_f64(),
    };

    let Some(kkt) = Kkt::factor(g, &a, DVector::from_element(k, 1.0)) else {
        return failed(SolveStatus::MaxIter, 0);
    };
    let Some((mut x, _, zt)) = kkt.solve(&DVector::zeros(n), &b, h) else {
        return failed(SolveStatus::MaxIter, 0);
    };
    let mut s = -zt;
    shift_positive(&mut s);
    let Some((_, mut y, mut z)) = kkt.solve(&-c, &DVector::zeros(b.len()), &DVector::zeros(k))
    else {
        return failed(SolveStatus::MaxIter, 0);
    };
    shift_positive(&mut z);
    let mut tau = 1.0f64;
    let mut kappa = 1.0f64;

    let c_scale = norm_inf(c).max(1.0);
    let mut stalls = 0;
    let mut iterations = 0;

    for iter in 0..settings.max_iter {
        iterations = iter + 1;
        let rx = a.tr_mul(&y) + g.tr_mul(&z) + c * tau;
        let ry = &a * &x - &b * tau;
        let rz = g * &x + &s - h * tau;
        let rt = c.dot(&x) + b.dot(&y) + h.dot(&z) + kappa;
        let mu = (s.dot(&z) + tau * kappa) / (k as f64 + 1.0);

        let pobj = c.dot(&x) / tau;
        let dobj = -(b.dot(&y) + h.dot(&z)) / tau;
        let pres = norm_inf(&ry).max(norm_inf(&rz)) / tau;
        let dres = norm_inf(&rx) / tau;
        let gap = (s.dot(&z) / (tau * tau)).max((pobj - dobj).abs());
        let gap_scale = pobj.abs().min(dobj.abs()).max(1.0);

        if pres <= tol && dres <= tol * c_scale && gap <= tol * gap_scale {
            return SolveReport {
                status: SolveStatus::Optimal,
                solution: &x / tau,
                objective: pobj,
                dual: &z / tau,
                dual_eq: &y / tau,
                primal_residual: pres,
                dual_residual: dres,
                iterations: iter,
                wall_time: start.elapsed().as_secs_f64(),
            };
        }
        let farkas = -(b.dot(&y) + h.dot(&z));
        if farkas > 0.0 && norm_inf(&(a.tr_mul(&y) + g.tr_mul(&z))) <= tol * farkas {
            return SolveReport {
                status: SolveStatus::Infeasible,
                solution: &x / tau,
                objective: f64::INFINITY,
                dual: &z / farkas,
                dual_eq: &y / farkas,
                primal_residual: pres,
                dual_residual: dres,
                iterations: iter,
                wall_time: start.elapsed().as_secs_f64(),
            };
        }
        let descent = -c.dot(&x);
        if descent > 0.0 && norm_inf(&(&a * &x)).max(norm_inf(&(g * &x + &s))) <= tol * descent {
            return SolveReport {
                status: SolveStatus::Unbounded,
                solution: &x / descent,
                objective: f64::NEG_INFINITY,
                dual: &z / tau,
                dual_eq: &y / tau,
                primal_residual: pres,
                dual_residual: dres,
                iterations: iter,
                wall_time: start.elapsed().as_secs_f64(),
            };
        }

        let Some(kkt) = Kkt::factor(g, &a, z.component_div(&s)) else {
            break;
        };
        let Some((x1, y1, z1)) = kkt.solve(&-c, &b, h) else {
            break;
        };
        let denom = c.dot(&x1) + b.dot(&y1) + h.dot(&z1) - kappa / tau;

        // One Newton direction for complementarity targets `ds_target` (s∘z row)
        // and `dk_target` (τκ row), residuals damped by (1 - sigma).
        let direction = |sigma: f64, ds_target: &DVector<f64>, dk_target: f64| {
            let damp = 1.0 - sigma;
            let r1 = -&rx * damp;
            let r2 = -&ry * damp;
            let r3 = -&rz * damp - ds_target.component_div(&z);
            let r4 = -rt * damp - dk_target / tau;
            let (x2, y2, z2) = kkt.solve(&r1, &r2, &r3)?;
            let dtau = (r4 - (c.dot(&x2) + b.dot(&y2) + h.dot(&z2))) / denom;
            let dx = x2 + &x1 * dtau;
            let dy = y2 + &y1 * dtau;
            let dz = z2 + &z1 * dtau;
            let ds = (ds_target - s.component_mul(&dz)).component_div(&z);
            let dk = (dk_target - kappa * dtau) / tau;
            Some((dx, dy, dz, ds, dtau, dk))
        };

        let ds_aff_target = -s.component_mul(&z);
        let Some((_, _, dz_a, ds_a, dtau_a, dk_a)) = direction(0.0, &ds_aff_target, -tau * kappa)
        else {
            break;
        };
        let alpha_aff = max_step(&[(&s, &ds_a), (&z, &dz_a)], &[(tau, dtau_a), (kappa, dk_a)]);
        let sigma = (1.0 - alpha_aff).clamp(0.0, 1.0).powi(3);

        let ds_target = &ds_aff_target - ds_a.component_mul(&dz_a)
            + DVector::from_element(k, sigma * mu);
        let dk_target = -tau * kappa - dtau_a * dk_a + sigma * mu;
        let Some((dx, dy, dz, ds, dtau, dk)) = direction(sigma, &ds_target, dk_target) else {
            break;
        };
        let alpha = (0.99 * max_step(&[(&s, &ds), (&z, &dz)], &[(tau, dtau), (kappa, dk)])).min(1.0);
        if alpha < 1e-12 {
            stalls += 1;
            if stalls > 5 {
                break;
            }
        }

        x += dx * alpha;
        y += dy * alpha;
        z += dz * alpha;
        s += ds * alpha;
        tau += dtau * alpha;
        kappa += dk * alpha;

        // Keep the homogeneous iterate on a sane scale.
        let scale = tau.max(kappa);
        if !(1e-8..=1e8).contains(&scale) {
            for v in [&mut x, &mut y, &mut z, &mut s] {
                *v /= scale;
            }
            tau /= scale;
            kappa /= scale;
        }
    }

    let rz = g * &x + &s - h * tau;
    SolveReport {
        status: SolveStatus::MaxIter,
        solution: &x / tau,
        objective: c.dot(&x) / tau,
        dual: &z / tau,
        dual_eq: &y / tau,
        primal_residual: norm_inf(&rz) / tau,
        dual_residual: norm_inf(&(a.tr_mul(&y) + g.tr_mul(&z) + c * tau)) / tau,
        iterations,
        wall_time: start.elapsed().as_secs_f64(),
    }
}
