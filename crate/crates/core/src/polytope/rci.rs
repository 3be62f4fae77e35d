//! Constraint tightening and robust control invariant sets.

use nalgebra::{DMatrix, DVector};

use super::Polytope;
use crate::linalg::{vconcat, vstack};
use crate::{Error, Result};

/// `{x | F x ≤ g − h_D(F)}`, each row tightened by the support function of `D`.
pub fn tighten(s: &Polytope, d: &Polytope) -> Result<Polytope> {
    if s.dim() != d.dim() {
        return Err(Error::Dimension(format!(
            "tightening a set in R^{} by a disturbance in R^{}",
            s.dim(),
            d.dim()
        )));
    }
    let mut tightened = DVector::zeros(s.n_rows());
    for i in 0..s.n_rows() {
        let h = d.support(&s.f().row(i).transpose())?;
        tightened[i] = s.g()[i] - h;
    }
    Polytope::new(s.f().clone(), tightened)
}

/// Project out the last coordinate (Fourier–Motzkin), then prune.
pub(crate) fn eliminate_last(p: &Polytope) -> Result<Polytope> {
    let n = p.dim();
    let j = n - 1;
    let eps = 1e-12;
    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for i in 0..p.n_rows() {
        let c = p.f()[(i, j)];
        if c > eps {
            pos.push(i);
        } else if c < -eps {
            neg.push(i);
        } else {
            rows.push((p.f().row(i).columns(0, j).transpose(), p.g()[i]));
        }
    }
    for &a in &pos {
        for &b in &neg {
            let ca = p.f()[(a, j)];
            let cb = -p.f()[(b, j)];
            let f = p.f().row(a).columns(0, j).transpose() / ca + p.f().row(b).columns(0, j).transpose() / cb;
            rows.push((f, p.g()[a] / ca + p.g()[b] / cb));
        }
    }
    let mut kept = Vec::with_capacity(rows.len());
    for (f, g) in rows {
        if f.norm() <= 1e-12 {
            if g < -1e-9 {
                return Err(Error::Empty("projection is empty".into()));
            }
            continue;
        }
        kept.push((f, g));
    }
    if kept.is_empty() {
        return Err(Error::Unbounded);
    }
    let f = DMatrix::from_fn(kept.len(), j, |r, c| kept[r].0[c]);
    let g = DVector::from_iterator(kept.len(), kept.iter().map(|r| r.1));
    Polytope::new(f, g)?.remove_redundancy()
}

#[derive(Debug, Clone)]
pub struct RciOptions {
    pub max_iter: usize,
    /// Every constraint of the one-step problem is tightened by this amount,
    /// so states of the result admit strictly feasible actions.
    pub margin: f64,
    /// Restrict the controller to `u = Wx + w`; the result is then robustly
    /// invariant under that law.
    pub feedback: Option<(DMatrix<f64>, DVector<f64>)>,
}

impl Default for RciOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            margin: 0.0,
            feedback: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RciResult {
    pub set: Polytope,
    /// The last iterate is a fixed point of the pre-set map.
    pub certified: bool,
    pub iterations: usize,
}

/// States of `s` from which some `u ∈ U` (shrunk by `margin`) drives the
/// nominal successor into `t` (shrunk by `margin`).
fn pre_set(
    s: &Polytope,
    t: &Polytope,
    u: &Polytope,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    margin: f64,
) -> Result<Polytope> {
    let n = a.nrows();
    let m = b.ncols();
    let mut lifted_s = DMatrix::zeros(s.n_rows(), n + m);
    lifted_s.view_mut((0, 0), (s.n_rows(), n)).copy_from(s.f());
    let mut lifted_t = DMatrix::zeros(t.n_rows(), n + m);
    lifted_t.view_mut((0, 0), (t.n_rows(), n)).copy_from(&(t.f() * a));
    lifted_t.view_mut((0, n), (t.n_rows(), m)).copy_from(&(t.f() * b));
    let mut lifted_u = DMatrix::zeros(u.n_rows(), n + m);
    lifted_u.view_mut((0, n), (u.n_rows(), m)).copy_from(u.f());
    let f = vstack(&[&lifted_s, &lifted_t, &lifted_u]);
    let g = vconcat(&[
        s.g(),
        &t.g().add_scalar(-margin),
        &u.g().add_scalar(-margin),
    ]);
    let mut p = Polytope::new(f, g)?.remove_redundancy()?;
    for _ in 0..m {
        p = eliminate_last(&p)?;
    }
    Ok(p)
}

/// Robust control invariant subset of `x_set` by backward reachability:
/// `S₀ = X`, `Sₖ₊₁ = Sₖ ∩ Pre(Sₖ ⊖ D)` with redundancy removal, stopped at
/// the first fixed point.
pub fn rci_iterate(
    x_set: &Polytope,
    u_set: &Polytope,
    d_set: &Polytope,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    opts: &RciOptions,
) -> Result<RciResult> {
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n || x_set.dim() != n || d_set.dim() != n || u_set.dim() != m {
        return Err(Error::Dimension("rci_iterate: inconsistent A, B and sets".into()));
    }
    let no_rci = |e: Error| match e {
        Error::Empty(_) => Error::Empty("no robust control invariant set within X".into()),
        other => other,
    };
    d_set.bounding_box()?;

    let mut s = x_set.clone();
    if let Some((w, w0)) = &opts.feedback {
        if w.shape() != (m, n) || w0.len() != m {
            return Err(Error::Dimension("feedback gain has the wrong shape".into()));
        }
        let input_rows = Polytope::new(u_set.f() * w, u_set.g() - u_set.f() * w0 - DVector::from_element(u_set.n_rows(), opts.margin))?;
        s = s.intersect(&input_rows)?;
    }
    s = s.remove_redundancy().map_err(no_rci)?;

    for it in 1..=opts.max_iter {
        let t = tighten(&s, d_set)?;
        let next = match &opts.feedback {
            Some((w, w0)) => {
                let closed = a + b * w;
                let pre = Polytope::new(
                    t.f() * closed,
                    t.g() - t.f() * (b * w0) - DVector::from_element(t.n_rows(), opts.margin),
                )?;
                s.intersect(&pre)?.remove_redundancy()
            }
            None => pre_set(&s, &t, u_set, a, b, opts.margin),
        }
        .map_err(no_rci)?;
        if next.contains_polytope(&s, 1e-9)? {
            return Ok(RciResult {
                set: next,
                certified: true,
                iterations: it,
            });
        }
        s = next;
    }
    Ok(RciResult {
        set: s,
        certified: false,
        iterations: opts.max_iter,
    })
}
