//! Alternating minimization baseline for orthogonal dictionary learning:
//! `min lambda |X|_1 + 1/2 |A X - Y|_F^2` over orthogonal `A`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Result, SdctError};
use crate::model::{make_orthogonal_dictionary, DataMatrix, DictionaryKind, DictionaryMatrix};
use crate::par::{map_indices, Execution};
use crate::rng::derive_seed;

/// `sign(x) max(|x| - lambda, 0)`.
pub fn soft_threshold(x: f64, lambda: f64) -> f64 {
    x.signum() * (x.abs() - lambda).max(0.0)
}

pub fn adm_objective(a: &DMatrix<f64>, x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> f64 {
    let l1: f64 = x.iter().map(|v| v.abs()).sum();
    lambda * l1 + 0.5 * (a * x - y).norm_squared()
}

#[derive(Debug, Clone)]
pub struct AdmResult {
    pub a: DictionaryMatrix,
    pub x: DMatrix<f64>,
    /// Objective after every half-step (X update, then A update).
    pub trace: Vec<f64>,
    /// Worst `|A_k^T A_k - I|` over all iterates.
    pub max_orthogonality_residual: f64,
}

impl AdmResult {
    pub fn final_objective(&self) -> f64 {
        *self.trace.last().unwrap_or(&f64::NAN)
    }
}

/// Runs `iters` rounds from a seeded random orthogonal initialization.
pub fn adm_orthogonal(y: &DataMatrix, lambda: f64, iters: usize, seed: u64) -> Result<AdmResult> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(SdctError::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    let yy = &y.entries;
    let n = yy.nrows();
    let mut a = make_orthogonal_dictionary(n, seed)?.entries;
    let mut x = DMatrix::zeros(n, yy.ncols());
    let mut trace = Vec::with_capacity(2 * iters);
    let mut worst = crate::model::gram_identity_residual(&a);
    for _ in 0..iters {
        x = (a.transpose() * yy).map(|v| soft_threshold(v, lambda));
        trace.push(adm_objective(&a, &x, yy, lambda));
        let svd = (yy * x.transpose()).svd(true, true);
        a = match (svd.u, svd.v_t) {
            (Some(u), Some(vt)) => u * vt,
            _ => return Err(SdctError::NumericFailure("SVD of Y X^T failed".into())),
        };
        worst = worst.max(crate::model::gram_identity_residual(&a));
        trace.push(adm_objective(&a, &x, yy, lambda));
    }
    Ok(AdmResult {
        a: DictionaryMatrix {
            entries: a,
            kind: DictionaryKind::Orthogonal,
            kappa: 1.0,
        },
        x,
        trace,
        max_orthogonality_residual: worst,
    })
}

/// Summary of many independently initialized ADM runs.
#[derive(Debug, Clone, Serialize)]
pub struct AdmTrialSummary {
    pub finals: Vec<f64>,
    /// `(max - min) / min` over final objectives.
    pub relative_spread: f64,
    pub max_orthogonality_residual: f64,
    /// Every run had a nonincreasing trace (up to rounding).
    pub monotone: bool,
}

pub fn adm_trials(
    y: &DataMatrix,
    lambda: f64,
    iters: usize,
    trials: usize,
    master_seed: u64,
) -> Result<AdmTrialSummary> {
    let runs = map_indices(trials, Execution::default(), |t| {
        adm_orthogonal(y, lambda, iters, derive_seed(master_seed, &[t as u64]))
    });
    let runs: Vec<AdmResult> = runs.into_iter().collect::<Result<_>>()?;
    let finals: Vec<f64> = runs.iter().map(AdmResult::final_objective).collect();
    let min = finals.iter().copied().fold(f64::INFINITY, f64::min);
    let max = finals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let relative_spread = if min > 0.0 { (max - min) / min } else { max - min };
    let monotone = runs.iter().all(|r| {
        r.trace
            .windows(2)
            .all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0))
    });
    Ok(AdmTrialSummary {
        finals,
        relative_spread,
        max_orthogonality_residual: runs
            .iter()
            .map(|r| r.max_orthogonality_residual)
            .fold(0.0, f64::max),
        monotone,
    })
}
