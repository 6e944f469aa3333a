//! Trust-region subproblem `min g^T xi + 1/2 xi^T B xi  s.t. |xi| <= Delta`.
//!
//! The primary route is the Moré-Sorensen safeguarded Newton iteration on the
//! secular equation `1/|xi(lambda)| = 1/Delta`, with `xi(lambda)` obtained from
//! a Cholesky factorization of `B + lambda I`. When the iteration cannot settle
//! (the hard case, where `g` has no component along the bottom eigenvector of
//! `B`, or its near neighbourhood) the problem is solved again in the
//! eigenbasis of `B`, which handles the hard case exactly.

use log::debug;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Result, SdctError};

const MS_MAX_ITER: usize = 60;
const SECULAR_MAX_ITER: usize = 200;
/// Relative accuracy required on `|xi| = Delta` for boundary solutions.
const BOUNDARY_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TrSubproblem {
    pub b: DMatrix<f64>,
    pub g: DVector<f64>,
    pub delta: f64,
}

impl TrSubproblem {
    pub fn new(b: DMatrix<f64>, g: DVector<f64>, delta: f64) -> Result<Self> {
        let m = g.len();
        if b.nrows() != m || b.ncols() != m {
            return Err(SdctError::InvalidShape(format!(
                "B is {}x{} but g has length {m}",
                b.nrows(),
                b.ncols()
            )));
        }
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(SdctError::InvalidParameter(format!("radius must be positive, got {delta}")));
        }
        let asym = (&b - b.transpose()).amax();
        if asym > 1e-12 * b.amax().max(1.0) {
            return Err(SdctError::InvalidInput(format!("B is not symmetric (|B - B^T| = {asym:e})")));
        }
        if b.iter().chain(g.iter()).any(|v| !v.is_finite()) {
            return Err(SdctError::InvalidInput("non-finite subproblem data".into()));
        }
        Ok(Self { b, g, delta })
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    /// `g^T xi + 1/2 xi^T B xi`.
    pub fn model(&self, xi: &DVector<f64>) -> f64 {
        self.g.dot(xi) + 0.5 * xi.dot(&(&self.b * xi))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveRoute {
    /// Unconstrained Newton step inside the ball.
    Interior,
    /// Moré-Sorensen Newton on the secular equation.
    MoreSorensen,
    /// Secular equation in the eigenbasis (easy case).
    Eigen,
    /// Eigenbasis solve with a null-direction component (hard case).
    HardCase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrSolution {
    pub xi: DVector<f64>,
    pub on_boundary: bool,
    pub multiplier: f64,
    pub route: SolveRoute,
}

/// `|(B + lambda I) xi + g|`, relative to `|B| |xi| + |g|`.
pub fn kkt_residual(sp: &TrSubproblem, sol: &TrSolution) -> f64 {
    let r = &sp.b * &sol.xi + &sol.xi * sol.multiplier + &sp.g;
    let scale = sp.b.norm() * sol.xi.norm() + sp.g.norm();
    if scale == 0.0 {
        r.norm()
    } else {
        r.norm() / scale
    }
}

fn shifted(b: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let mut s = b.clone();
    for i in 0..s.nrows() {
        s[(i, i)] += lambda;
    }
    s
}

fn max_abs_col_sum(b: &DMatrix<f64>) -> f64 {
    b.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn solve_subproblem(sp: &TrSubproblem) -> Result<TrSolution> {
    if sp.dim() == 0 {
        return Ok(TrSolution {
            xi: DVector::zeros(0),
            on_boundary: false,
            multiplier: 0.0,
            route: SolveRoute::Interior,
        });
    }
    if let Some(sol) = more_sorensen(sp) {
        return Ok(sol);
    }
    debug!("Moré-Sorensen did not settle; solving in the eigenbasis");
    eigen_solve(sp)
}

/// Returns `None` when the iteration should hand over to the eigen route.
fn more_sorensen(sp: &TrSubproblem) -> Option<TrSolution> {
    let (b, g, delta) = (&sp.b, &sp.g, sp.delta);
    let gnorm = g.norm();
    let bnorm = max_abs_col_sum(b);

    if let Some(chol) = Cholesky::new(b.clone()) {
        let xi = -chol.solve(g);
        if xi.norm() <= delta {
            return Some(TrSolution {
                xi,
                on_boundary: false,
                multiplier: 0.0,
                route: SolveRoute::Interior,
            });
        }
    }
    if gnorm == 0.0 {
        // Only the hard case can put a zero-gradient solution on the boundary.
        return None;
    }

    let min_diag = (0..b.nrows()).map(|i| b[(i, i)]).fold(f64::INFINITY, f64::min);
    let mut lo = 0.0f64.max(-min_diag).max(gnorm / delta - bnorm);
    let mut hi = (gnorm / delta + bnorm).max(0.0);
    let mut lambda = lo;
    for _ in 0..MS_MAX_ITER {
        if !(lambda > lo || lambda == 0.0) || lambda >= hi {
            lambda = (lo * hi).sqrt().max(lo + 0.01 * (hi - lo));
        }
        let Some(chol): Option<Cholesky<f64, Dyn>> = Cholesky::new(shifted(b, lambda)) else {
            lo = lo.max(lambda);
            lambda = (lo * hi).sqrt().max(lo + 0.01 * (hi - lo));
            if hi - lo <= 1e-14 * hi.max(1.0) {
                return None;
            }
            continue;
        };
        let xi = -chol.solve(g);
        let norm = xi.norm();
        if (norm - delta).abs() <= BOUNDARY_RTOL * delta {
            return Some(TrSolution {
                xi,
                on_boundary: true,
                multiplier: lambda,
                route: SolveRoute::MoreSorensen,
            });
        }
        if norm < delta {
            hi = hi.min(lambda);
        } else {
            lo = lo.max(lambda);
        }
        if hi - lo <= 1e-14 * hi.max(1.0) {
            return None;
        }
        // L w = xi, Newton step on 1/|xi(lambda)| - 1/Delta.
        let w = chol.l().solve_lower_triangular(&xi)?;
        let ratio = norm / w.norm();
        lambda += ratio * ratio * (norm - delta) / delta;
        if !(lambda > lo && lambda < hi) {
            lambda = (lo * hi).sqrt().max(lo + 0.01 * (hi - lo));
        }
    }
    None
}

/// Exact solve in the eigenbasis of `B`, including the hard case.
pub fn eigen_solve(sp: &TrSubproblem) -> Result<TrSolution> {
    let (b, g, delta) = (&sp.b, &sp.g, sp.delta);
    let m = sp.dim();
    let eig = b.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(SdctError::SubproblemFailure("eigendecomposition did not converge".into()));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = eig.eigenvectors.select_columns(order.iter());
    let gamma = vecs.transpose() * g;
    let scale = vals.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    let lam1 = vals[0];
    let gnorm = g.norm();

    let build = |lambda: f64, skip_bottom: &[bool]| -> DVector<f64> {
        let mut coef = DVector::zeros(m);
        for i in 0..m {
            if !skip_bottom[i] {
                coef[i] = -gamma[i] / (vals[i] + lambda);
            }
        }
        &vecs * coef
    };
    let no_skip = vec![false; m];

    if lam1 > 0.0 {
        let xi = build(0.0, &no_skip);
        if xi.norm() <= delta {
            return Ok(TrSolution {
                xi,
                on_boundary: false,
                multiplier: 0.0,
                route: SolveRoute::Interior,
            });
        }
    }

    // Hard case: g has (numerically) no weight on the bottom eigenspace and the
    // remaining components fall short of the boundary at lambda = -lambda_1.
    let eig_tol = 1e-12 * scale;
    let bottom: Vec<bool> = vals.iter().map(|v| *v <= lam1 + eig_tol).collect();
    let lambda_floor = (-lam1).max(0.0);
    if lam1 <= 0.0 {
        let bottom_weight: f64 = (0..m).filter(|&i| bottom[i]).map(|i| gamma[i] * gamma[i]).sum::<f64>().sqrt();
        if bottom_weight <= 1e-13 * gnorm.max(scale * delta) {
            let partial = build(lambda_floor, &bottom);
            let short = delta * delta - partial.norm_squared();
            if short >= 0.0 {
                let first = (0..m).find(|&i| bottom[i]).unwrap_or(0);
                let tau = short.sqrt();
                let xi = partial + vecs.column(first) * tau;
                return Ok(TrSolution {
                    xi,
                    on_boundary: true,
                    multiplier: lambda_floor,
                    route: SolveRoute::HardCase,
                });
            }
        }
    }

    // Easy case: the root of phi(lambda) = 1/|xi(lambda)| - 1/Delta lies in
    // (lambda_floor, lambda_floor + |g|/Delta].
    let norm_at = |lambda: f64| -> (f64, f64) {
        let mut s2 = 0.0;
        let mut s3 = 0.0;
        for i in 0..m {
            let d = vals[i] + lambda;
            let t = gamma[i] * gamma[i] / (d * d);
            s2 += t;
            s3 += t / d;
        }
        (s2.sqrt(), s3)
    };
    let mut lo = lambda_floor;
    let mut hi = lambda_floor + gnorm / delta;
    let mut lambda = hi;
    for _ in 0..SECULAR_MAX_ITER {
        let (norm, s3) = norm_at(lambda);
        if !norm.is_finite() {
            lo = lambda;
            lambda = 0.5 * (lo + hi);
            continue;
        }
        if (norm - delta).abs() <= BOUNDARY_RTOL * delta || hi - lo <= 4.0 * f64::EPSILON * hi.max(1.0) {
            break;
        }
        if norm > delta {
            lo = lambda;
        } else {
            hi = lambda;
        }
        // phi' = s3 / |xi|^3
        let phi = 1.0 / norm - 1.0 / delta;
        let dphi = s3 / (norm * norm * norm);
        let next = lambda - phi / dphi;
        lambda = if next > lo && next < hi && next.is_finite() {
            next
        } else {
            0.5 * (lo + hi)
        };
    }
    let xi = build(lambda, &no_skip);
    if xi.iter().any(|v| !v.is_finite()) {
        return Err(SdctError::SubproblemFailure(format!(
            "secular equation produced a non-finite step at lambda = {lambda}"
        )));
    }
    Ok(TrSolution {
        xi,
        on_boundary: true,
        multiplier: lambda,
        route: SolveRoute::Eigen,
    })
}
