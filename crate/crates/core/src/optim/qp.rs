use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::{SolveReport, SolveStatus};
use crate::linalg::norm_inf;
use crate::{Error, Result};

/// `min ½xᵀQx + qᵀx  s.t.  Gx ≤ h` with `Q` symmetric positive semidefinite.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub q: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

impl QpProblem {
    /// Validates dimensions, symmetry (1e-10) and positive semidefiniteness.
    /// A zero Hessian is rejected; use [`QpProblem::linear`] for that case.
    pub fn new(hessian: DMatrix<f64>, q: DVector<f64>, g: DMatrix<f64>, h: DVector<f64>) -> Result<Self> {
        let p = Self::unchecked(hessian, q, g, h)?;
        let n = p.q.len();
        for i in 0..n {
            for j in 0..i {
                if (p.hessian[(i, j)] - p.hessian[(j, i)]).abs() > 1e-10 {
                    return Err(Error::InvalidInput(format!(
                        "QP Hessian is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        if p.hessian.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidInput(
                "QP Hessian is zero; construct it with QpProblem::linear".into(),
            ));
        }
        let eig = p.hessian.clone().symmetric_eigen().eigenvalues;
        let scale = eig.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        if eig.min() < -1e-10 * scale {
            return Err(Error::InvalidInput(format!(
                "QP Hessian is not positive semidefinite (eigenvalue {:.3e})",
                eig.min()
            )));
        }
        Ok(p)
    }

    /// A linear objective solved through the QP path.
    pub fn linear(q: DVector<f64>, g: DMatrix<f64>, h: DVector<f64>) -> Result<Self> {
        let n = q.len();
        Self::unchecked(DMatrix::zeros(n, n), q, g, h)
    }

    /// Euclidean projection `argmin ‖u − v‖²  s.t.  Gu ≤ h`.
    pub fn projection(v: &DVector<f64>, g: DMatrix<f64>, h: DVector<f64>) -> Result<Self> {
        let n = v.len();
        Self::unchecked(DMatrix::identity(n, n) * 2.0, v * -2.0, g, h)
    }

    fn unchecked(hessian: DMatrix<f64>, q: DVector<f64>, g: DMatrix<f64>, h: DVector<f64>) -> Result<Self> {
        let n = q.len();
        if hessian.shape() != (n, n) || g.ncols() != n || g.nrows() != h.len() {
            return Err(Error::Dimension(format!(
                "QP with {n} variables: Q is {:?}, G is {:?}, h has {} entries",
                hessian.shape(),
                g.shape(),
                h.len()
            )));
        }
        Ok(Self { hessian, q, g, h })
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.q.dot(x)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    /// Over-relaxation parameter in (0, 2).
    pub alpha: f64,
    pub adaptive_rho: bool,
    pub polish: bool,
    pub check_every: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 50_000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            adaptive_rho: true,
            polish: true,
            check_every: 5,
        }
    }
}

/// Optional initial iterate (primal solution and inequality multipliers).
#[derive(Debug, Clone)]
pub struct QpWarmStart {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
}

pub fn solve_qp(p: &QpProblem, tol: f64) -> SolveReport {
    solve_qp_with(
        p,
        &QpSettings {
            tol,
            ..Default::default()
        },
        None,
    )
}

/// Largest violation among stationarity, primal feasibility, dual
/// feasibility and complementary slackness.
pub fn kkt_residual(p: &QpProblem, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let (stat, prim, rest) = kkt_parts(p, x, y);
    stat.max(prim).max(rest)
}

fn kkt_parts(p: &QpProblem, x: &DVector<f64>, y: &DVector<f64>) -> (f64, f64, f64) {
    let stat = norm_inf(&(&p.hessian * x + &p.q + p.g.tr_mul(y)));
    let slack = &p.h - &p.g * x;
    let prim = slack.iter().fold(0.0f64, |a, &s| a.max(-s));
    let dual_inf = y.iter().fold(0.0f64, |a, &v| a.max(-v));
    let comp = y
        .iter()
        .zip(slack.iter())
        .fold(0.0f64, |a, (&yi, &si)| a.max((yi.max(0.0) * si).abs()));
    (stat, prim, dual_inf.max(comp))
}

struct Scaled {
    a: DMatrix<f64>,
    u: DVector<f64>,
    row_scale: DVector<f64>,
}

fn scale_rows(p: &QpProblem) -> Scaled {
    let row_scale = DVector::from_fn(p.g.nrows(), |i, _| {
        let nrm = p.g.row(i).norm();
        if nrm > 0.0 {
            1.0 / nrm
        } else {
            1.0
        }
    });
    let mut a = p.g.clone();
    for (i, mut row) in a.row_iter_mut().enumerate() {
        row *= row_scale[i];
    }
    let u = p.h.component_mul(&row_scale);
    Scaled { a, u, row_scale }
}

fn factor(
    hessian: &DMatrix<f64>,
    a: &DMatrix<f64>,
    sigma: f64,
    rho: f64,
) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let n = hessian.nrows();
    let k = hessian + DMatrix::identity(n, n) * sigma + a.tr_mul(a) * rho;
    k.cholesky()
}

/// Solve the equality-constrained KKT system on a guessed active set.
fn polish(
    p: &QpProblem,
    sc: &Scaled,
    z: &DVector<f64>,
    y: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = p.q.len();
    let active: Vec<usize> = (0..sc.u.len()).filter(|&i| sc.u[i] - z[i] < y[i]).collect();
    let na = active.len();
    let delta = 1e-9;
    let dim = n + na;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(&p.hessian);
    for (r, &i) in active.iter().enumerate() {
        for j in 0..n {
            kkt[(n + r, j)] = sc.a[(i, j)];
            kkt[(j, n + r)] = sc.a[(i, j)];
        }
    }
    let mut reg = kkt.clone();
    for i in 0..n {
        reg[(i, i)] += delta;
    }
    for i in n..dim {
        reg[(i, i)] -= delta;
    }
    let lu = reg.lu();
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, n).copy_from(&-&p.q);
    for (r, &i) in active.iter().enumerate() {
        rhs[n + r] = sc.u[i];
    }
    let mut sol = lu.solve(&rhs)?;
    for _ in 0..5 {
        let res = &rhs - &kkt * &sol;
        if norm_inf(&res) < 1e-15 {
            break;
        }
        sol += lu.solve(&res)?;
    }
    if !sol.iter().all(|v| v.is_finite()) {
        return None;
    }
    let x = sol.rows(0, n).into_owned();
    let mut y_orig = DVector::zeros(sc.u.len());
    for (r, &i) in active.iter().enumerate() {
        y_orig[i] = sol[n + r] * sc.row_scale[i];
    }
    Some((x, y_orig))
}

/// ADMM in the splitting `Ax = z, z ≤ u` with row-normalized constraints.
pub fn solve_qp_with(p: &QpProblem, settings: &QpSettings, warm: Option<&QpWarmStart>) -> SolveReport {
    let start = Instant::now();
    let n = p.q.len();
    let k = p.h.len();
    let sc = scale_rows(p);
    let a = &sc.a;
    let u = &sc.u;
    let tol = settings.tol;
    let alpha = settings.alpha;
    let sigma = settings.sigma;
    let mut rho = settings.rho;

    let (mut x, mut y) = match warm {
        Some(w) if w.x.len() == n && w.y.len() == k => (w.x.clone(), w.y.component_div(&sc.row_scale)),
        _ => (DVector::zeros(n), DVector::zeros(k)),
    };
    let mut z = (a * &x).zip_map(u, |v, ub| v.min(ub));

    let report = |status, x: DVector<f64>, y: DVector<f64>, iterations| {
        let (stat, prim, _) = kkt_parts(p, &x, &y);
        SolveReport {
            status,
            objective: p.objective(&x),
            solution: x,
            dual: y,
            dual_eq: DVector::zeros(0),
            primal_residual: prim,
            dual_residual: stat,
            iterations,
            wall_time: start.elapsed().as_secs_f64(),
        }
    };

    let Some(mut chol) = factor(&p.hessian, a, sigma, rho) else {
        return report(SolveStatus::MaxIter, x, y, 0);
    };
    let mut inner_tol = tol;
    let eps_inf = 1e-6;
    let mut best: Option<(f64, DVector<f64>, DVector<f64>)> = None;

    for iter in 1..=settings.max_iter {
        let x_prev = x.clone();
        let y_prev = y.clone();

        let rhs = &x * sigma - &p.q + a.tr_mul(&(&z * rho - &y));
        let x_tilde = chol.solve(&rhs);
        let z_tilde = a * &x_tilde;
        x = &x_tilde * alpha + &x * (1.0 - alpha);
        let z_relaxed = &z_tilde * alpha + &z * (1.0 - alpha);
        let z_new = (&z_relaxed + &y / rho).zip_map(u, |v, ub| v.min(ub));
        y += (&z_relaxed - &z_new) * rho;
        z = z_new;

        if iter % settings.check_every != 0 && iter != 1 {
            continue;
        }

        let ax = a * &x;
        let px = &p.hessian * &x;
        let aty = a.tr_mul(&y);
        let r_prim = norm_inf(&(&ax - &z));
        let r_dual = norm_inf(&(&px + &p.q + &aty));
        let prim_scale = norm_inf(&ax).max(norm_inf(&z));
        let dual_scale = norm_inf(&px).max(norm_inf(&aty)).max(norm_inf(&p.q));

        if r_prim <= inner_tol * (1.0 + prim_scale) && r_dual <= inner_tol * (1.0 + dual_scale) {
            let y_orig = y.component_mul(&sc.row_scale);
            let mut candidate = (kkt_residual(p, &x, &y_orig), x.clone(), y_orig);
            if settings.polish {
                if let Some((xp, yp)) = polish(p, &sc, &z, &y) {
                    let rp = kkt_residual(p, &xp, &yp);
                    if rp < candidate.0 {
                        candidate = (rp, xp, yp);
                    }
                }
            }
            if candidate.0 <= tol {
                return report(SolveStatus::Optimal, candidate.1, candidate.2, iter);
            }
            if best.as_ref().is_none_or(|b| candidate.0 < b.0) {
                best = Some(candidate);
            }
            inner_tol = (inner_tol * 0.1).max(1e-15);
        } else if settings.polish && iter % (20 * settings.check_every) == 0 {
            // Degenerate vertices can stall ADMM well before the residuals
            // are small while the active set is already right.
            if let Some((xp, yp)) = polish(p, &sc, &z, &y) {
                let rp = kkt_residual(p, &xp, &yp);
                if rp <= tol {
                    return report(SolveStatus::Optimal, xp, yp, iter);
                }
            }
        }

        let dy = &y - &y_prev;
        let dy_norm = norm_inf(&dy);
        if dy_norm > 1e-12
            && norm_inf(&a.tr_mul(&dy)) <= eps_inf * dy_norm
            && u.dot(&dy) <= -eps_inf * dy_norm
            && dy.min() >= -eps_inf * dy_norm
        {
            let cert = dy.component_mul(&sc.row_scale) / dy_norm;
            let mut r = report(SolveStatus::Infeasible, x, cert, iter);
            r.objective = f64::INFINITY;
            return r;
        }
        let dx = &x - &x_prev;
        let dx_norm = norm_inf(&dx);
        if dx_norm > 1e-12
            && norm_inf(&(&p.hessian * &dx)) <= eps_inf * dx_norm
            && p.q.dot(&dx) <= -eps_inf * dx_norm
            && (a * &dx).max() <= eps_inf * dx_norm
        {
            let mut r = report(SolveStatus::Unbounded, dx / dx_norm, y.component_mul(&sc.row_scale), iter);
            r.objective = f64::NEG_INFINITY;
            return r;
        }

        if settings.adaptive_rho && iter % (5 * settings.check_every) == 0 {
            let num = r_prim / prim_scale.max(1e-10);
            let den = r_dual / dual_scale.max(1e-10);
            if num > 0.0 && den > 0.0 {
                let proposal = (rho * (num / den).sqrt()).clamp(1e-6, 1e6);
                if proposal > 5.0 * rho || proposal < 0.2 * rho {
                    if let Some(c) = factor(&p.hessian, a, sigma, proposal) {
                        rho = proposal;
                        chol = c;
                    }
                }
            }
        }
    }

    match best {
        Some((_, xb, yb)) => report(SolveStatus::MaxIter, xb, yb, settings.max_iter),
        None => {
            let y_orig = y.component_mul(&sc.row_scale);
            report(SolveStatus::MaxIter, x, y_orig, settings.max_iter)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    fn unit_box(n: usize, r: f64) -> (DMatrix<f64>, DVector<f64>) {
        let mut g = DMatrix::zeros(2 * n, n);
        for i in 0..n {
            g[(i, i)] = 1.0;
            g[(n + i, i)] = -1.0;
        }
        (g, DVector::from_element(2 * n, r))
    }

    #[test]
    fn projection_clamps_onto_box() {
        let (g, h) = unit_box(2, 1.0);
        let p = QpProblem::projection(&dv(&[2.0, -0.3]), g, h).unwrap();
        let r = solve_qp(&p, 1e-8);
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.solution[0] - 1.0).abs() < 1e-8);
        assert!((r.solution[1] + 0.3).abs() < 1e-8);
    }

    #[test]
    fn scalar_lower_bound() {
        // min u² s.t. u >= 1
        let p = QpProblem::new(
            DMatrix::from_element(1, 1, 2.0),
            dv(&[0.0]),
            DMatrix::from_element(1, 1, -1.0),
            dv(&[-1.0]),
        )
        .unwrap();
        let r = solve_qp(&p, 1e-8);
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.solution[0] - 1.0).abs() < 1e-8);
        assert!(kkt_residual(&p, &r.solution, &r.dual) < 1e-8);
    }

    #[test]
    fn interior_point_is_unchanged_by_projection() {
        let (g, h) = unit_box(3, 1.0);
        let v = dv(&[0.2, -0.5, 0.9]);
        let p = QpProblem::projection(&v, g, h).unwrap();
        let r = solve_qp(&p, 1e-8);
        assert!((&r.solution - &v).norm() <= 1e-8);
    }

    #[test]
    fn rejects_indefinite_and_asymmetric() {
        let (g, h) = unit_box(2, 1.0);
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(QpProblem::new(indefinite, dv(&[0.0, 0.0]), g.clone(), h.clone()).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(QpProblem::new(asym, dv(&[0.0, 0.0]), g.clone(), h.clone()).is_err());
        assert!(QpProblem::new(DMatrix::zeros(2, 2), dv(&[0.0, 0.0]), g, h).is_err());
    }

    #[test]
    fn detects_infeasible() {
        let g = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let p = QpProblem::new(DMatrix::from_element(1, 1, 2.0), dv(&[0.0]), g, dv(&[-1.0, -1.0])).unwrap();
        let r = solve_qp(&p, 1e-8);
        assert_eq!(r.status, SolveStatus::Infeasible);
    }

    #[test]
    fn detects_unbounded_linear() {
        let p = QpProblem::linear(dv(&[-1.0]), DMatrix::from_element(1, 1, -1.0), dv(&[0.0])).unwrap();
        let r = solve_qp(&p, 1e-8);
        assert_eq!(r.status, SolveStatus::Unbounded);
    }

    #[test]
    fn warm_start_reaches_same_solution() {
        let (g, h) = unit_box(2, 1.0);
        let p = QpProblem::projection(&dv(&[3.0, 0.1]), g, h).unwrap();
        let cold = solve_qp(&p, 1e-9);
        let warm = QpWarmStart {
            x: cold.solution.clone(),
            y: cold.dual.clone(),
        };
        let hot = solve_qp_with(&p, &QpSettings { tol: 1e-9, ..Default::default() }, Some(&warm));
        assert_eq!(hot.status, SolveStatus::Optimal);
        assert!((hot.solution - cold.solution).norm() < 1e-8);
        assert!(hot.iterations <= cold.iterations);
    }

    #[test]
    fn deterministic() {
        let (g, h) = unit_box(2, 1.0);
        let p = QpProblem::projection(&dv(&[1.7, -2.0]), g, h).unwrap();
        assert!(solve_qp(&p, 1e-8).same_result(&solve_qp(&p, 1e-8)));
    }
}
