//! Gauge functions of polytopic C-sets and the gauge map between two of them.

use nalgebra::{DMatrix, DVector};

use super::Polytope;
use crate::{Error, Result};

/// Slack allowed when checking that the argument of a gauge map lies in `P`.
const DOMAIN_TOL: f64 = 1e-9;

fn check_cset(p: &Polytope, name: &str) -> Result<()> {
    if let Some(i) = p.g().iter().position(|&v| v <= 0.0) {
        return Err(Error::NotCSet(format!("{name}: offset {i} is {}", p.g()[i])));
    }
    Ok(())
}

fn check_dim(p: &Polytope, v: &DVector<f64>) -> Result<()> {
    if p.dim() != v.len() {
        return Err(Error::Dimension(format!(
            "vector of length {} for a polytope in R^{}",
            v.len(),
            p.dim()
        )));
    }
    Ok(())
}

/// `max_i F⁽ⁱ⁾ᵀv / g⁽ⁱ⁾` and the lowest maximizing row index, without the
/// clamp at zero.
pub(crate) fn gauge_raw(p: &Polytope, v: &DVector<f64>) -> (f64, usize) {
    gauge_rows(p.f(), p.g(), v)
}

pub(crate) fn gauge_rows(f: &DMatrix<f64>, g: &DVector<f64>, v: &DVector<f64>) -> (f64, usize) {
    let fv = f * v;
    let mut best = f64::NEG_INFINITY;
    let mut arg = 0;
    for i in 0..fv.len() {
        let val = fv[i] / g[i];
        if val > best {
            best = val;
            arg = i;
        }
    }
    (best, arg)
}

/// Gauge (Minkowski functional) of a polytopic C-set.
pub fn gauge(p: &Polytope, v: &DVector<f64>) -> Result<f64> {
    check_cset(p, "P")?;
    check_dim(p, v)?;
    Ok(gauge_raw(p, v).0.max(0.0))
}

fn validate_pair(p: &Polytope, q: &Polytope, v: &DVector<f64>) -> Result<(f64, f64)> {
    check_cset(p, "P")?;
    check_cset(q, "Q")?;
    check_dim(p, v)?;
    check_dim(q, v)?;
    let gp = gauge_raw(p, v).0.max(0.0);
    if gp > 1.0 + DOMAIN_TOL {
        return Err(Error::OutsideDomain(gp));
    }
    let gq = gauge_raw(q, v).0.max(0.0);
    Ok((gp, gq))
}

/// `G(v | P, Q) = γ_P(v) / γ_Q(v) · v`, extended by `G(0) = 0`.
pub fn gauge_map(p: &Polytope, q: &Polytope, v: &DVector<f64>) -> Result<DVector<f64>> {
    let (gp, gq) = validate_pair(p, q, v)?;
    if v.iter().all(|&x| x == 0.0) {
        return Ok(DVector::zeros(v.len()));
    }
    if gq <= 0.0 {
        return Err(Error::NotCSet("Q is unbounded along the argument".into()));
    }
    Ok(v * (gp / gq))
}

/// Vector-Jacobian product `Jᵀ·upstream` of the gauge map at `v`.
///
/// Ties in either gauge are broken by the lowest row index. At the origin,
/// where the map is positively homogeneous but not differentiable, the
/// linearization along the upstream direction is used: `γ_P(d)/γ_Q(d) · d`.
pub fn gauge_map_vjp(
    p: &Polytope,
    q: &Polytope,
    v: &DVector<f64>,
    upstream: &DVector<f64>,
) -> Result<DVector<f64>> {
    validate_pair(p, q, v)?;
    if upstream.len() != v.len() {
        return Err(Error::Dimension("upstream length differs from argument".into()));
    }
    Ok(vjp_unchecked(p, q, v, upstream))
}

pub(crate) fn vjp_unchecked(
    p: &Polytope,
    q: &Polytope,
    v: &DVector<f64>,
    upstream: &DVector<f64>,
) -> DVector<f64> {
    vjp_rows((p.f(), p.g()), (q.f(), q.g()), v, upstream)
}

/// [`gauge_map_vjp`] on raw `(F, g)` pairs, without validation.
pub(crate) fn vjp_rows(
    p: (&DMatrix<f64>, &DVector<f64>),
    q: (&DMatrix<f64>, &DVector<f64>),
    v: &DVector<f64>,
    upstream: &DVector<f64>,
) -> DVector<f64> {
    if v.iter().all(|&x| x == 0.0) {
        if upstream.iter().all(|&x| x == 0.0) {
            return DVector::zeros(v.len());
        }
        let ratio = gauge_rows(p.0, p.1, upstream).0.max(0.0) / gauge_rows(q.0, q.1, upstream).0;
        return upstream * ratio;
    }
    let (gp_raw, ip) = gauge_rows(p.0, p.1, v);
    let (gq, iq) = gauge_rows(q.0, q.1, v);
    let gp = gp_raw.max(0.0);
    // ∇γ_P and ∇γ_Q are the active rows scaled by their offsets.
    let dot = v.dot(upstream);
    let mut out = upstream * (gp / gq);
    if gp_raw > 0.0 {
        let coef = dot / (gq * p.1[ip]);
        out += p.0.row(ip).transpose() * coef;
    }
    let coef = -gp * dot / (gq * gq * q.1[iq]);
    out += q.0.row(iq).transpose() * coef;
    out
}
