//! Riemannian trust-region minimization of the sphere objective.
//!
//! Each iteration forms the second-order model on the tangent space at the
//! current iterate, solves the trust-region subproblem in an orthonormal
//! tangent basis, maps the step back with the exponential map and adapts the
//! radius from the ratio of actual to predicted decrease.

mod sphere;
mod subproblem;

use log::debug;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SdctError};
use crate::model::DataMatrix;
use crate::objective::{evaluate, Order, SmoothingParams, SpherePoint};
use crate::par::Execution;

pub use sphere::{quadratic_model, retract, tangent_basis, TANGENT_TOL};
pub use subproblem::{
    eigen_solve, kkt_residual, solve_subproblem, SolveRoute, TrSolution, TrSubproblem,
};

/// Relative tolerance for deciding that a step sits on the trust-region boundary.
pub const BOUNDARY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrmConfig {
    pub delta0: f64,
    pub delta_max: f64,
    pub delta_min: f64,
    /// Very-successful threshold on rho.
    pub eta_vs: f64,
    /// Successful threshold on rho.
    pub eta_s: f64,
    pub gamma_i: f64,
    pub gamma_d: f64,
    pub stop_tol: f64,
    pub max_iter: usize,
    /// Keep the radius at `delta0` for the whole run.
    pub fixed_radius: bool,
}

impl Default for TrmConfig {
    fn default() -> Self {
        Self {
            delta0: 0.1,
            delta_max: 1.0,
            delta_min: 1e-16,
            eta_vs: 0.9,
            eta_s: 0.1,
            gamma_i: 2.0,
            gamma_d: 0.5,
            stop_tol: 1e-6,
            max_iter: 10_000,
            fixed_radius: false,
        }
    }
}

impl TrmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(SdctError::InvalidParameter(msg.to_string()));
        if !(0.0 < self.eta_s && self.eta_s < self.eta_vs && self.eta_vs < 1.0) {
            return bad("need 0 < eta_s < eta_vs < 1");
        }
        if !(self.gamma_d > 0.0 && self.gamma_d < 1.0 && self.gamma_i > 1.0) {
            return bad("need 0 < gamma_d < 1 < gamma_i");
        }
        if !(0.0 < self.delta_min && self.delta_min <= self.delta0 && self.delta0 <= self.delta_max) {
            return bad("need 0 < delta_min <= delta0 <= delta_max");
        }
        if !(self.stop_tol >= 0.0) {
            return bad("stop_tol must be non-negative");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ProgressTol,
    MaxIter,
    SubproblemFailure,
}

/// One trust-region iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateRecord {
    /// Objective at the trial point.
    pub f: f64,
    /// Radius used for this iteration's subproblem.
    pub delta: f64,
    pub rho: f64,
    pub step_norm: f64,
    pub accepted: bool,
    /// Iterate at the start of the iteration.
    pub point: DVector<f64>,
    pub kkt_residual: f64,
    pub route: SolveRoute,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrmResult {
    pub q_final: SpherePoint,
    pub f_initial: f64,
    pub f_final: f64,
    pub iterates: Vec<IterateRecord>,
    pub termination: Termination,
    /// Set when the run stopped on a subproblem failure.
    pub failure: Option<String>,
}

impl TrmResult {
    pub fn iterations(&self) -> usize {
        self.iterates.len()
    }

    pub fn accepted_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.iterates.iter().filter(|r| r.accepted).map(|r| r.f)
    }
}

pub fn minimize(
    yhat: &DataMatrix,
    mu: SmoothingParams,
    cfg: &TrmConfig,
    q0: &SpherePoint,
) -> Result<TrmResult> {
    minimize_with(yhat, mu, cfg, q0, Execution::default())
}

/// [`minimize`] with an explicit execution mode for the objective passes.
pub fn minimize_with(
    yhat: &DataMatrix,
    mu: SmoothingParams,
    cfg: &TrmConfig,
    q0: &SpherePoint,
    exec: Execution,
) -> Result<TrmResult> {
    cfg.validate()?;
    let y = &yhat.entries;
    let n = q0.dim();
    if y.nrows() != n {
        return Err(SdctError::InvalidShape(format!(
            "start point has dimension {n} but data has {} rows",
            y.nrows()
        )));
    }
    let mut q = q0.clone();
    let mut eval = evaluate(y, q.as_vector().as_slice(), mu, Order::Hessian, exec)?;
    let f_initial = eval.value;
    let mut iterates = Vec::new();
    let mut delta = cfg.delta0;
    let mut termination = Termination::MaxIter;
    let mut failure = None;

    if n == 1 {
        return Ok(TrmResult {
            q_final: q,
            f_initial,
            f_final: f_initial,
            iterates,
            termination: Termination::ProgressTol,
            failure,
        });
    }

    for _ in 0..cfg.max_iter {
        let f = eval.value;
        let grad = eval.grad.as_ref().expect("gradient evaluated");
        let hess = eval.hess.as_ref().expect("hessian evaluated");
        let u = tangent_basis(&q);
        let gq = grad.dot(q.as_vector());
        let g_red = u.transpose() * grad;
        let mut b_red = u.transpose() * hess * &u;
        for i in 0..n - 1 {
            b_red[(i, i)] -= gq;
        }
        let sym = b_red.transpose();
        b_red = (b_red + sym) * 0.5;

        let sp = TrSubproblem::new(b_red, g_red, delta)?;
        let sol = match solve_subproblem(&sp) {
            Ok(sol) => sol,
            Err(e) => {
                termination = Termination::SubproblemFailure;
                failure = Some(e.to_string());
                break;
            }
        };
        let xi_norm = sol.xi.norm();
        if xi_norm == 0.0 {
            debug!("zero step: stationary point with PSD model");
            termination = Termination::ProgressTol;
            break;
        }
        let step = &u * &sol.xi;
        let step_norm = step.norm();
        let trial = retract(&q, &step)?;
        let f_trial = evaluate(y, trial.as_vector().as_slice(), mu, Order::Value, exec)?.value;

        let predicted = -sp.model(&sol.xi);
        let actual = f - f_trial;
        let rho = if predicted > 0.0 {
            actual / predicted
        } else if actual > 0.0 {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        };
        let on_boundary = (xi_norm - delta).abs() <= BOUNDARY_TOL * delta;
        let used_delta = delta;
        let accepted = if rho >= cfg.eta_vs && on_boundary {
            if !cfg.fixed_radius {
                delta = (cfg.gamma_i * delta).min(cfg.delta_max);
            }
            true
        } else if rho >= cfg.eta_s {
            true
        } else {
            if !cfg.fixed_radius {
                delta = (cfg.gamma_d * delta).max(cfg.delta_min);
            }
            false
        };
        iterates.push(IterateRecord {
            f: f_trial,
            delta: used_delta,
            rho,
            step_norm,
            accepted,
            point: q.as_vector().clone(),
            kkt_residual: kkt_residual(&sp, &sol),
            route: sol.route,
        });
        let progress = (f_trial - f).abs() / step_norm;
        if accepted {
            q = trial;
            eval = evaluate(y, q.as_vector().as_slice(), mu, Order::Hessian, exec)?;
        }
        if progress <= cfg.stop_tol {
            termination = Termination::ProgressTol;
            break;
        }
    }

    Ok(TrmResult {
        f_final: eval.value,
        q_final: q,
        f_initial,
        iterates,
        termination,
        failure,
    })
}
