//! Halfspace-representation polytopes `{z | Fz ≤ g}`.

mod gauge;
mod rci;

pub use gauge::{gauge, gauge_map, gauge_map_vjp};
pub(crate) use gauge::{gauge_rows, vjp_rows};
pub use rci::{rci_iterate, tighten, RciOptions, RciResult};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{self, vconcat, vstack};
use crate::optim::{solve_lp, LpProblem, SolveStatus};
use crate::{Error, Result};

/// LP accuracy used for all geometric queries.
const GEOM_TOL: f64 = 1e-10;
/// Slack below which a row counts as implied by the others.
const REDUNDANCY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPolytope", into = "RawPolytope")]
pub struct Polytope {
    f: DMatrix<f64>,
    g: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawPolytope {
    #[serde(rename = "F")]
    f: Vec<Vec<f64>>,
    g: Vec<f64>,
}

impl TryFrom<RawPolytope> for Polytope {
    type Error = Error;

    fn try_from(raw: RawPolytope) -> Result<Self> {
        let cols = raw.f.first().map_or(0, |r| r.len());
        Polytope::new(linalg::matrix_from_rows(&raw.f, cols)?, DVector::from_vec(raw.g))
    }
}

impl From<Polytope> for RawPolytope {
    fn from(p: Polytope) -> Self {
        RawPolytope {
            f: linalg::matrix_to_rows(&p.f),
            g: p.g.as_slice().to_vec(),
        }
    }
}

/// Chebyshev-ball summary of a polytope.
#[derive(Debug, Clone, PartialEq)]
pub struct CSetCertificate {
    pub center: DVector<f64>,
    /// Zero for empty or flat sets, infinite when the LP is unbounded.
    pub radius: f64,
    pub bounded: bool,
}

impl Polytope {
    pub fn new(f: DMatrix<f64>, g: DVector<f64>) -> Result<Self> {
        if f.nrows() != g.len() {
            return Err(Error::Dimension(format!(
                "polytope with {} rows but {} offsets",
                f.nrows(),
                g.len()
            )));
        }
        for i in 0..f.nrows() {
            if f.row(i).norm() <= 1e-14 {
                return Err(Error::InvalidInput(format!("polytope row {i} is zero")));
            }
        }
        if !linalg::all_finite(f.as_slice()) || !linalg::all_finite(g.as_slice()) {
            return Err(Error::InvalidInput("polytope has non-finite entries".into()));
        }
        Ok(Self { f, g })
    }

    /// `radius · B∞` in `dim` dimensions.
    pub fn hypercube(dim: usize, radius: f64) -> Self {
        let lo = DVector::from_element(dim, -radius);
        let hi = DVector::from_element(dim, radius);
        Self::from_box(&lo, &hi).expect("hypercube rows are nonzero")
    }

    /// Axis-aligned box `lo ≤ z ≤ hi`, upper-bound rows first.
    pub fn from_box(lo: &DVector<f64>, hi: &DVector<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::Dimension("box bounds differ in length".into()));
        }
        let n = lo.len();
        let mut f = DMatrix::zeros(2 * n, n);
        for i in 0..n {
            f[(i, i)] = 1.0;
            f[(n + i, i)] = -1.0;
        }
        Self::new(f, vconcat(&[hi, &-lo]))
    }

    pub fn dim(&self) -> usize {
        self.f.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.f.nrows()
    }

    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn g(&self) -> &DVector<f64> {
        &self.g
    }

    /// `λ·P = {z | Fz ≤ λg}`.
    pub fn scaled(&self, lambda: f64) -> Self {
        Self {
            f: self.f.clone(),
            g: &self.g * lambda,
        }
    }

    /// `P − v = {z | F(z + v) ≤ g}`.
    pub fn shifted(&self, v: &DVector<f64>) -> Self {
        Self {
            f: self.f.clone(),
            g: &self.g - &self.f * v,
        }
    }

    pub fn intersect(&self, other: &Polytope) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::Dimension(format!(
                "intersecting polytopes in R^{} and R^{}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(Self {
            f: vstack(&[&self.f, &other.f]),
            g: vconcat(&[&self.g, &other.g]),
        })
    }

    /// `Fz − g`; nonpositive entries mean the row holds.
    pub fn residual(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.f * z - &self.g
    }

    pub fn max_residual(&self, z: &DVector<f64>) -> f64 {
        self.residual(z).max()
    }

    pub fn contains_point(&self, z: &DVector<f64>, tol: f64) -> bool {
        z.len() == self.dim() && (0..self.n_rows()).all(|i| self.f.row(i).dot(&z.transpose()) <= self.g[i] + tol)
    }

    /// All offsets strictly positive: the origin is an interior point.
    pub fn is_cset(&self) -> bool {
        self.g.iter().all(|&v| v > 0.0)
    }

    /// `max { dirᵀz | z ∈ P }`.
    pub fn support(&self, dir: &DVector<f64>) -> Result<f64> {
        if self.n_rows() == 0 {
            return Err(Error::Unbounded);
        }
        let lp = LpProblem::new(-dir, self.f.clone(), self.g.clone())?;
        let r = solve_lp(&lp, GEOM_TOL);
        match r.status {
            SolveStatus::Optimal => Ok(-r.objective),
            SolveStatus::Unbounded => Err(Error::Unbounded),
            SolveStatus::Infeasible => Err(Error::Empty("support of an empty polytope".into())),
            status => Err(Error::solver(status, "support function LP")),
        }
    }

    /// Largest inscribed Euclidean ball via `max r s.t. Fc + r‖Fᵢ‖ ≤ g`.
    pub fn chebyshev(&self) -> Result<CSetCertificate> {
        let n = self.dim();
        let mut gm = DMatrix::zeros(self.n_rows(), n + 1);
        gm.view_mut((0, 0), (self.n_rows(), n)).copy_from(&self.f);
        for i in 0..self.n_rows() {
            gm[(i, n)] = self.f.row(i).norm();
        }
        let mut c = DVector::zeros(n + 1);
        c[n] = -1.0;
        let lp = LpProblem::new(c, gm, self.g.clone())?;
        let r = solve_lp(&lp, GEOM_TOL);
        match r.status {
            SolveStatus::Optimal => {
                let radius = r.solution[n];
                let center = r.solution.rows(0, n).into_owned();
                if radius <= 0.0 {
                    return Ok(CSetCertificate {
                        center,
                        radius: 0.0,
                        bounded: true,
                    });
                }
                let bounded = match self.bounding_box() {
                    Ok(_) => true,
                    Err(Error::Unbounded) => false,
                    Err(e) => return Err(e),
                };
                Ok(CSetCertificate {
                    center,
                    radius,
                    bounded,
                })
            }
            SolveStatus::Unbounded => Ok(CSetCertificate {
                center: DVector::zeros(n),
                radius: f64::INFINITY,
                bounded: false,
            }),
            status => Err(Error::solver(status, "Chebyshev center LP")),
        }
    }

    /// Per-axis bounds from `2n` LPs.
    pub fn bounding_box(&self) -> Result<(DVector<f64>, DVector<f64>)> {
        let n = self.dim();
        let mut lo = DVector::zeros(n);
        let mut hi = DVector::zeros(n);
        for i in 0..n {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            hi[i] = self.support(&e)?;
            lo[i] = -self.support(&-e)?;
        }
        Ok((lo, hi))
    }

    /// `other ⊆ self`, checked row by row with support functions.
    pub fn contains_polytope(&self, other: &Polytope, tol: f64) -> Result<bool> {
        for i in 0..self.n_rows() {
            let dir = self.f.row(i).transpose();
            match other.support(&dir) {
                Ok(h) if h > self.g[i] + tol => return Ok(false),
                Ok(_) => {}
                Err(Error::Unbounded) => return Ok(false),
                Err(e) => return Err(e),
            }
        }
        Ok(true)
    }

    /// Unit-norm rows with duplicate normals merged.
    pub fn normalized(&self) -> Self {
        let mut rows: Vec<(DVector<f64>, f64)> = Vec::with_capacity(self.n_rows());
        for i in 0..self.n_rows() {
            let nrm = self.f.row(i).norm();
            let fi = self.f.row(i).transpose() / nrm;
            let gi = self.g[i] / nrm;
            match rows.iter_mut().find(|(f, _)| (f - &fi).amax() < 1e-12) {
                Some(existing) => existing.1 = existing.1.min(gi),
                None => rows.push((fi, gi)),
            }
        }
        Self::from_rows(rows, self.dim())
    }

    fn from_rows(rows: Vec<(DVector<f64>, f64)>, dim: usize) -> Self {
        let f = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i].0[j]);
        let g = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
        Self { f, g }
    }

    /// Drop rows implied by the others (one LP per row). Fails with
    /// [`Error::Empty`] when the set has no interior.
    pub fn remove_redundancy(&self) -> Result<Self> {
        let cert = self.chebyshev()?;
        if cert.radius <= REDUNDANCY_TOL {
            return Err(Error::Empty("polytope has no interior".into()));
        }
        let p = self.normalized();
        let mut keep: Vec<bool> = vec![true; p.n_rows()];
        for i in 0..p.n_rows() {
            let idx: Vec<usize> = (0..p.n_rows()).filter(|&j| keep[j]).collect();
            let f = DMatrix::from_fn(idx.len(), p.dim(), |r, c| p.f[(idx[r], c)]);
            let g = DVector::from_fn(idx.len(), |r, _| {
                let j = idx[r];
                if j == i {
                    p.g[j] + 1.0
                } else {
                    p.g[j]
                }
            });
            let relaxed = Polytope { f, g };
            let dir = p.f.row(i).transpose();
            match relaxed.support(&dir) {
                Ok(h) if h <= p.g[i] + REDUNDANCY_TOL => keep[i] = false,
                Ok(_) | Err(Error::Unbounded) => {}
                Err(e) => return Err(e),
            }
        }
        let rows = (0..p.n_rows())
            .filter(|&i| keep[i])
            .map(|i| (p.f.row(i).transpose(), p.g[i]))
            .collect();
        Ok(Self::from_rows(rows, p.dim()))
    }

    /// `count` points drawn uniformly by rejection from the bounding box.
    pub fn sample_uniform(&self, count: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
        if count == 0 {
            return Ok(Vec::new());
        }
        UniformSampler::new(self, seed)?.sample_n(count)
    }
}

/// Number of draws after which the acceptance-rate guard is evaluated.
const PROBE_DRAWS: u64 = 1_000_000;
const MIN_ACCEPTANCE: f64 = 1e-6;

/// Rejection sampler over a bounded polytope with an explicit seed.
#[derive(Debug, Clone)]
pub struct UniformSampler {
    poly: Polytope,
    lo: DVector<f64>,
    hi: DVector<f64>,
    rng: ChaCha8Rng,
    draws: u64,
    accepted: u64,
}

impl UniformSampler {
    pub fn new(poly: &Polytope, seed: u64) -> Result<Self> {
        let (lo, hi) = poly.bounding_box()?;
        Ok(Self {
            poly: poly.clone(),
            lo,
            hi,
            rng: ChaCha8Rng::seed_from_u64(seed),
            draws: 0,
            accepted: 0,
        })
    }

    pub fn sample(&mut self) -> Result<DVector<f64>> {
        loop {
            let z = DVector::from_fn(self.lo.len(), |i, _| {
                let t: f64 = self.rng.random();
                self.lo[i] + (self.hi[i] - self.lo[i]) * t
            });
            self.draws += 1;
            if self.poly.contains_point(&z, 0.0) {
                self.accepted += 1;
                return Ok(z);
            }
            if self.draws >= PROBE_DRAWS {
                let rate = self.accepted as f64 / self.draws as f64;
                if rate < MIN_ACCEPTANCE {
                    return Err(Error::ThinSet(rate));
                }
            }
        }
    }

    pub fn sample_n(&mut self, count: usize) -> Result<Vec<DVector<f64>>> {
        (0..count).map(|_| self.sample()).collect()
    }
}
