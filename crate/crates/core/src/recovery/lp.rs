//! Dense bounded-variable simplex and the l1 rounding program.
//!
//! [`solve_lp`] maximizes `c^T x` subject to `A x = b`, `l <= x <= u` with a
//! two-phase revised simplex. Bland's rule selects both the entering and the
//! leaving variable, so degenerate data cannot cycle. The basis inverse is
//! refactored from scratch every iteration; the row count is the ambient
//! dimension, so this stays cheap while keeping multipliers accurate.
//!
//! The rounding program `min |q^T Y|_1 s.t. <r, q> = 1` is solved through its
//! LP dual `max lambda s.t. Y s - lambda r = 0, -1 <= s <= 1`; the optimal `q`
//! is minus the simplex multiplier vector of the final basis.

use log::debug;
use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SdctError};
use crate::model::DataMatrix;
use crate::objective::SpherePoint;

const FEAS_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-11;

/// `max c^T x  s.t.  A x = b,  lower <= x <= upper`.
#[derive(Debug, Clone)]
pub struct BoundedLp {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Optional starting values for the structural variables, clamped into
    /// their bounds. Nonbasic variables may rest strictly between bounds.
    pub start: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: DVector<f64>,
    /// Simplex multipliers of the equality rows.
    pub duals: DVector<f64>,
    pub objective: f64,
    pub basis: Vec<usize>,
    pub iterations: usize,
    /// Rows whose artificial variable could not be pivoted out.
    pub redundant_rows: Vec<usize>,
}

struct Simplex<'a> {
    a: &'a DMatrix<f64>,
    b: &'a DVector<f64>,
    m: usize,
    /// Structural + artificial column count.
    total: usize,
    nstruct: usize,
    art_sign: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    x: Vec<f64>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    iterations: usize,
}

impl<'a> Simplex<'a> {
    fn column(&self, j: usize) -> DVector<f64> {
        if j < self.nstruct {
            self.a.column(j).clone_owned()
        } else {
            let mut e = DVector::zeros(self.m);
            e[j - self.nstruct] = self.art_sign[j - self.nstruct];
            e
        }
    }

    fn basis_matrix(&self) -> DMatrix<f64> {
        let cols: Vec<DVector<f64>> = self.basis.iter().map(|&j| self.column(j)).collect();
        DMatrix::from_columns(&cols)
    }

    fn recompute_basic(&mut self, lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>) -> Result<()> {
        let xn = DVector::from_fn(self.nstruct, |j, _| if self.is_basic[j] { 0.0 } else { self.x[j] });
        let mut rhs = self.b - self.a * xn;
        for i in 0..self.m {
            let j = self.nstruct + i;
            if !self.is_basic[j] {
                rhs[i] -= self.art_sign[i] * self.x[j];
            }
        }
        let xb = lu
            .solve(&rhs)
            .ok_or_else(|| SdctError::Internal("singular simplex basis".into()))?;
        for (i, &j) in self.basis.iter().enumerate() {
            self.x[j] = xb[i];
        }
        Ok(())
    }

    /// Runs Bland-rule simplex iterations maximizing `cost`. Returns false if unbounded.
    fn optimize(&mut self, cost: &[f64], max_iter: usize) -> Result<(bool, DVector<f64>)> {
        let col_amax: Vec<f64> = (0..self.total)
            .map(|j| if j < self.nstruct { self.a.column(j).amax() } else { 1.0 })
            .collect();
        loop {
            let bmat = self.basis_matrix();
            let lu = bmat.clone().lu();
            self.recompute_basic(&lu)?;
            let cb = DVector::from_iterator(self.m, self.basis.iter().map(|&j| cost[j]));
            let pi = bmat
                .transpose()
                .lu()
                .solve(&cb)
                .ok_or_else(|| SdctError::Internal("singular simplex basis".into()))?;
            if self.iterations >= max_iter {
                return Err(SdctError::Internal(format!("simplex exceeded {max_iter} iterations")));
            }
            let pi_a = self.a.tr_mul(&pi);
            let pi_max = pi.amax();

            // Bland: lowest-index improving variable.
            let mut entering = None;
            for j in 0..self.total {
                if self.is_basic[j] || self.lower[j] == self.upper[j] {
                    continue;
                }
                let priced = if j < self.nstruct {
                    pi_a[j]
                } else {
                    pi[j - self.nstruct] * self.art_sign[j - self.nstruct]
                };
                let d = cost[j] - priced;
                let scale = 1.0 + col_amax[j] * pi_max;
                if d > FEAS_TOL * scale && self.x[j] < self.upper[j] {
                    entering = Some((j, 1.0));
                    break;
                }
                if d < -FEAS_TOL * scale && self.x[j] > self.lower[j] {
                    entering = Some((j, -1.0));
                    break;
                }
            }
            let Some((enter, dir)) = entering else {
                return Ok((true, pi));
            };
            self.iterations += 1;

            let alpha = lu
                .solve(&self.column(enter))
                .ok_or_else(|| SdctError::Internal("singular simplex basis".into()))?;
            // Ratio test; ties broken by the lowest variable index.
            let mut step = if dir > 0.0 {
                self.upper[enter] - self.x[enter]
            } else {
                self.x[enter] - self.lower[enter]
            };
            let mut leave: Option<(usize, f64)> = None;
            for (i, &j) in self.basis.iter().enumerate() {
                let rate = dir * alpha[i];
                let (limit, bound) = if rate > PIVOT_TOL {
                    ((self.x[j] - self.lower[j]) / rate, self.lower[j])
                } else if rate < -PIVOT_TOL {
                    ((self.upper[j] - self.x[j]) / -rate, self.upper[j])
                } else {
                    continue;
                };
                if !limit.is_finite() {
                    continue;
                }
                let limit = limit.max(0.0);
                let better = match leave {
                    None => limit < step,
                    Some((li, _)) => {
                        limit < step - 1e-12 * step.abs().max(1.0)
                            || (limit <= step + 1e-12 * step.abs().max(1.0) && j < self.basis[li])
                    }
                };
                if better || (leave.is_none() && limit <= step) {
                    step = if leave.is_none() || limit < step { limit } else { step };
                    leave = Some((i, bound));
                }
            }
            if step == f64::INFINITY {
                return Ok((false, pi));
            }
            match leave {
                None => {
                    // Entering variable reaches its own bound first.
                    self.x[enter] = if dir > 0.0 { self.upper[enter] } else { self.lower[enter] };
                }
                Some((i, bound)) => {
                    let old = self.basis[i];
                    self.x[enter] += dir * step;
                    self.x[old] = bound;
                    self.is_basic[old] = false;
                    self.is_basic[enter] = true;
                    self.basis[i] = enter;
                }
            }
        }
    }
}

pub fn solve_lp(lp: &BoundedLp) -> Result<LpSolution> {
    let m = lp.a.nrows();
    let nstruct = lp.a.ncols();
    if lp.b.len() != m || lp.c.len() != nstruct || lp.lower.len() != nstruct || lp.upper.len() != nstruct {
        return Err(SdctError::InvalidShape("inconsistent LP dimensions".into()));
    }
    let total = nstruct + m;
    let mut x = vec![0.0; total];
    for j in 0..nstruct {
        let (l, u) = (lp.lower[j], lp.upper[j]);
        if l > u {
            return Err(SdctError::InvalidParameter(format!("variable {j} has empty bounds")));
        }
        let hint = lp.start.as_ref().map(|s| s[j]);
        x[j] = match (hint, l.is_finite(), u.is_finite()) {
            (Some(h), _, _) if h.is_finite() => h.clamp(l, u),
            (_, true, _) => l,
            (_, false, true) => u,
            (_, false, false) => 0.0,
        };
    }
    let mut resid = lp.b.clone();
    for j in 0..nstruct {
        if x[j] != 0.0 {
            resid -= lp.a.column(j) * x[j];
        }
    }
    let art_sign: Vec<f64> = resid.iter().map(|r| if *r < 0.0 { -1.0 } else { 1.0 }).collect();
    let mut lower = lp.lower.clone();
    let mut upper = lp.upper.clone();
    lower.extend(std::iter::repeat_n(0.0, m));
    upper.extend(std::iter::repeat_n(f64::INFINITY, m));
    let basis: Vec<usize> = (nstruct..total).collect();
    let mut is_basic = vec![false; total];
    for &j in &basis {
        is_basic[j] = true;
    }
    let mut sx = Simplex {
        a: &lp.a,
        b: &lp.b,
        m,
        total,
        nstruct,
        art_sign,
        lower,
        upper,
        x,
        basis,
        is_basic,
        iterations: 0,
    };
    let max_iter = 50 * (total + 10) + 10_000;

    // Phase 1: maximize -sum(artificials).
    let mut phase1 = vec![0.0; total];
    for c in phase1.iter_mut().skip(nstruct) {
        *c = -1.0;
    }
    sx.optimize(&phase1, max_iter)?;
    let infeas: f64 = sx.x[nstruct..].iter().sum();
    let bscale = 1.0 + lp.b.amax();
    if infeas > 1e-7 * bscale {
        return Ok(LpSolution {
            status: LpStatus::Infeasible,
            x: DVector::from_column_slice(&sx.x[..nstruct]),
            duals: DVector::zeros(m),
            objective: f64::NAN,
            basis: sx.basis.clone(),
            iterations: sx.iterations,
            redundant_rows: Vec::new(),
        });
    }
    // Pin artificials at zero and pivot them out of the basis where possible.
    for j in nstruct..total {
        sx.upper[j] = 0.0;
        if !sx.is_basic[j] {
            sx.x[j] = 0.0;
        }
    }
    let mut redundant = Vec::new();
    for i in 0..m {
        let j = sx.basis[i];
        if j < nstruct {
            continue;
        }
        let lu = sx.basis_matrix().lu();
        let mut swapped = false;
        for k in 0..nstruct {
            if sx.is_basic[k] {
                continue;
            }
            let alpha = lu.solve(&sx.column(k)).unwrap_or_else(|| DVector::zeros(m));
            if alpha[i].abs() > 1e-9 * (1.0 + alpha.amax()) {
                sx.is_basic[j] = false;
                sx.x[j] = 0.0;
                sx.is_basic[k] = true;
                sx.basis[i] = k;
                swapped = true;
                break;
            }
        }
        if !swapped {
            redundant.push(j - nstruct);
        }
    }

    // Phase 2.
    let mut cost = lp.c.as_slice().to_vec();
    cost.extend(std::iter::repeat_n(0.0, m));
    let (bounded, pi) = sx.optimize(&cost, max_iter)?;
    let xs = DVector::from_column_slice(&sx.x[..nstruct]);
    let objective = lp.c.dot(&xs);
    debug!("simplex finished after {} iterations", sx.iterations);
    Ok(LpSolution {
        status: if bounded { LpStatus::Optimal } else { LpStatus::Unbounded },
        x: xs,
        duals: pi,
        objective,
        basis: sx.basis,
        iterations: sx.iterations,
        redundant_rows: redundant,
    })
}

/// Inputs of the rounding program.
#[derive(Debug, Clone)]
pub struct RoundingProblem<'a> {
    pub yhat: &'a DataMatrix,
    /// Normal of the constraint `<r, q> = 1`.
    pub r: DVector<f64>,
}

/// Optimizer of the rounding program, with its certificate.
#[derive(Debug, Clone)]
pub struct RoundingSolution {
    /// LP optimizer normalized to unit length.
    pub q: SpherePoint,
    /// Unnormalized optimizer with `<r, q> = 1`.
    pub q_raw: DVector<f64>,
    /// `|q_raw^T Y|_1`.
    pub objective: f64,
    /// Dual optimum `lambda`; equals `objective` at optimality.
    pub dual_objective: f64,
    /// Dual variables `s` in `[-1, 1]`.
    pub signs: DVector<f64>,
    pub iterations: usize,
}

pub fn lp_round(prob: &RoundingProblem<'_>) -> Result<SpherePoint> {
    Ok(lp_round_certified(prob)?.q)
}

pub fn lp_round_certified(prob: &RoundingProblem<'_>) -> Result<RoundingSolution> {
    let y = &prob.yhat.entries;
    let (n, p) = (y.nrows(), y.ncols());
    if prob.r.len() != n {
        return Err(SdctError::InvalidShape(format!(
            "r has length {} but data has {n} rows",
            prob.r.len()
        )));
    }
    if p == 0 {
        return Err(SdctError::EmptyData);
    }
    let rnorm = prob.r.norm();
    if !(rnorm > 0.0) || !rnorm.is_finite() {
        return Err(SdctError::InvalidInput("rounding normal r must be nonzero".into()));
    }
    let mut a = DMatrix::zeros(n, p + 1);
    a.columns_mut(0, p).copy_from(y);
    a.set_column(p, &(-&prob.r));
    let mut c = DVector::zeros(p + 1);
    c[p] = 1.0;
    let mut lower = vec![-1.0; p + 1];
    let mut upper = vec![1.0; p + 1];
    lower[p] = f64::NEG_INFINITY;
    upper[p] = f64::INFINITY;
    // s = 0, lambda = 0 is feasible, so phase 1 only has to pivot artificials out.
    let start = vec![0.0; p + 1];
    let lp = BoundedLp {
        a,
        b: DVector::zeros(n),
        c,
        lower,
        upper,
        start: Some(start),
    };
    let sol = solve_lp(&lp)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => {
            return Err(SdctError::Internal("rounding LP reported infeasible".into()));
        }
        LpStatus::Unbounded => {
            return Err(SdctError::DegenerateData("rounding LP is unbounded".into()));
        }
    }
    if !sol.redundant_rows.is_empty() {
        return Err(SdctError::DegenerateData(format!(
            "data does not span R^{n}: {} redundant rows",
            sol.redundant_rows.len()
        )));
    }
    let q_raw = -&sol.duals;
    let objective = (y.transpose() * &q_raw).iter().map(|v| v.abs()).sum();
    Ok(RoundingSolution {
        q: SpherePoint::new(q_raw.clone())?,
        q_raw,
        objective,
        dual_objective: sol.x[p],
        signs: sol.x.rows(0, p).clone_owned(),
        iterations: sol.iterations,
    })
}
