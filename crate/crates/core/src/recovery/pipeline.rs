//! Deflation, dictionary reconstruction and the end-to-end recovery run.

use std::time::Instant;

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::lp::{lp_round_certified, RoundingProblem};
use super::matching::{match_error, MatchResult};
use super::precondition::{polar_factor, precondition, whitening_operator};
use crate::error::{Result, SdctError};
use crate::model::{
    make_complete_dictionary, make_orthogonal_dictionary, sample_bg, synthesize, DataMatrix,
    DictionaryKind, DictionaryMatrix,
};
use crate::objective::{SmoothingParams, SpherePoint};
use crate::rng::{derive_seed, rng_from_seed};
use crate::trm::{minimize, TrmConfig};

/// Uniformly random point on the unit sphere of R^n.
pub fn random_sphere_point(n: usize, seed: u64) -> SpherePoint {
    let mut rng = rng_from_seed(seed);
    loop {
        let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        if let Ok(q) = SpherePoint::new(v) {
            return q;
        }
    }
}

/// Orthonormal basis (n x (n - k)) of the orthogonal complement of the
/// columns of `v` (n x k, assumed orthonormal). Deterministic.
pub fn orthonormal_complement(v: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = v.shape();
    let mut stacked = DMatrix::zeros(n, k + n);
    stacked.columns_mut(0, k).copy_from(v);
    stacked.columns_mut(k, n).fill_with_identity();
    let q = stacked.qr().q();
    q.columns(k, n - k).clone_owned()
}

/// Gram-Schmidt (twice) orthonormalization of the given directions.
pub fn orthonormalize(rows: &[SpherePoint]) -> DMatrix<f64> {
    let n = rows.first().map_or(0, SpherePoint::dim);
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(rows.len());
    for r in rows {
        let mut v = r.as_vector().clone();
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&v);
                v -= b * c;
            }
        }
        let norm = v.norm();
        if norm > 0.0 {
            basis.push(v / norm);
        }
    }
    if basis.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&basis)
    }
}

/// One deflation stage.
#[derive(Debug, Clone)]
pub struct RowStage {
    /// TRM output lifted back to R^n (the rounding normal).
    pub r: DVector<f64>,
    /// Rounded direction.
    pub q: SpherePoint,
    pub trm_iterations: usize,
}

/// Rows recovered by deflation; `error` is set when a stage failed, in which
/// case `stages` holds the rows recovered before the failure.
#[derive(Debug, Clone)]
pub struct RowRecovery {
    pub stages: Vec<RowStage>,
    pub error: Option<String>,
}

impl RowRecovery {
    pub fn rows(&self) -> Vec<SpherePoint> {
        self.stages.iter().map(|s| s.q.clone()).collect()
    }

    pub fn is_complete(&self, n: usize) -> bool {
        self.error.is_none() && self.stages.len() == n
    }
}

/// Sequentially recovers all `n` row directions of `yhat`: TRM on the data
/// restricted to the complement of the rows found so far, then LP rounding in
/// the full space.
pub fn recover_rows(
    yhat: &DataMatrix,
    mu: SmoothingParams,
    cfg: &TrmConfig,
    seed: u64,
) -> RowRecovery {
    recover_first_rows(yhat, mu, cfg, seed, yhat.dim())
}

/// The first `count` stages of [`recover_rows`].
pub fn recover_first_rows(
    yhat: &DataMatrix,
    mu: SmoothingParams,
    cfg: &TrmConfig,
    seed: u64,
    count: usize,
) -> RowRecovery {
    let count = count.min(yhat.dim());
    let mut stages: Vec<RowStage> = Vec::with_capacity(count);
    for l in 0..count {
        let found: Vec<SpherePoint> = stages.iter().map(|s| s.q.clone()).collect();
        match recover_one(yhat, mu, cfg, seed, l, &found) {
            Ok(stage) => stages.push(stage),
            Err(e) => {
                warn!("deflation stage {l} failed: {e}");
                return RowRecovery {
                    stages,
                    error: Some(format!("stage {l}: {e}")),
                };
            }
        }
    }
    RowRecovery { stages, error: None }
}

fn recover_one(
    yhat: &DataMatrix,
    mu: SmoothingParams,
    cfg: &TrmConfig,
    seed: u64,
    stage: usize,
    found: &[SpherePoint],
) -> Result<RowStage> {
    let n = yhat.dim();
    let (r, iters) = if found.is_empty() {
        let q0 = random_sphere_point(n, derive_seed(seed, &[stage as u64]));
        let res = minimize(yhat, mu, cfg, &q0)?;
        if let Some(msg) = &res.failure {
            return Err(SdctError::SubproblemFailure(msg.clone()));
        }
        (res.q_final.into_vector(), res.iterates.len())
    } else {
        let basis = orthonormalize(found);
        let u = orthonormal_complement(&basis);
        if u.ncols() == 1 {
            (u.column(0).clone_owned(), 0)
        } else {
            let reduced = DataMatrix::new(u.transpose() * &yhat.entries);
            let z0 = random_sphere_point(u.ncols(), derive_seed(seed, &[stage as u64]));
            let res = minimize(&reduced, mu, cfg, &z0)?;
            if let Some(msg) = &res.failure {
                return Err(SdctError::SubproblemFailure(msg.clone()));
            }
            (&u * res.q_final.as_vector(), res.iterates.len())
        }
    };
    let rounded = lp_round_certified(&RoundingProblem { yhat, r: r.clone() })?;
    Ok(RowStage {
        r,
        q: rounded.q,
        trm_iterations: iters,
    })
}

/// Recovered dictionary and coefficients.
#[derive(Debug, Clone)]
pub struct RecoveryResult {
    pub a_hat: DictionaryMatrix,
    pub x_hat: DMatrix<f64>,
    pub rows: Vec<SpherePoint>,
    /// Filled by [`RecoveryResult::assign_against`].
    pub assignment: Option<MatchResult>,
    /// `|Y - A_hat X_hat|_F / |Y|_F`.
    pub residual: f64,
}

impl RecoveryResult {
    pub fn assign_against(&mut self, a0: &DMatrix<f64>) -> &MatchResult {
        self.assignment = Some(match_error(&self.a_hat.entries, a0));
        self.assignment.as_ref().unwrap()
    }
}

/// Reads `X_hat` off as `q_i^T Yhat` and solves `A_hat = Y X^T (X X^T)^{-1}`.
pub fn reconstruct(y: &DataMatrix, rows: &[SpherePoint], yhat: &DataMatrix) -> Result<RecoveryResult> {
    let n = y.dim();
    if rows.len() != n {
        return Err(SdctError::InvalidShape(format!(
            "need {n} recovered rows, got {}",
            rows.len()
        )));
    }
    if yhat.entries.shape() != y.entries.shape() {
        return Err(SdctError::InvalidShape("Y and Yhat differ in shape".into()));
    }
    let qmat = DMatrix::from_columns(&rows.iter().map(|r| r.as_vector().clone()).collect::<Vec<_>>());
    let x_hat = qmat.transpose() * &yhat.entries;
    let gram = &x_hat * x_hat.transpose();
    let sv = gram.clone().singular_values();
    if !(sv.min() > 1e-12 * sv.max()) {
        return Err(SdctError::RankDeficiency(format!(
            "X X^T has condition number {:e}",
            sv.max() / sv.min()
        )));
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| SdctError::RankDeficiency("X X^T is not positive definite".into()))?;
    // A = Y X^T G^{-1}  <=>  G A^T = X Y^T
    let a_hat = chol.solve(&(&x_hat * y.entries.transpose())).transpose();
    let residual = (&y.entries - &a_hat * &x_hat).norm() / y.entries.norm();
    Ok(RecoveryResult {
        a_hat: DictionaryMatrix {
            entries: a_hat,
            kind: DictionaryKind::Complete,
            kappa: f64::NAN,
        },
        x_hat,
        rows: rows.to_vec(),
        assignment: None,
        residual,
    })
}

/// How the Bernoulli rate used by the whitening is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ThetaSource {
    /// The generating rate is known.
    #[default]
    Known,
    /// Estimated from the support density of one pilot row recovered from
    /// data whitened with theta = 1.
    Pilot,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub n: usize,
    pub p: usize,
    pub theta: f64,
    /// 1 for an orthogonal dictionary; larger values give a complete one.
    pub kappa: f64,
    pub mu: f64,
    pub seed: u64,
    pub trm: TrmConfig,
    pub theta_source: ThetaSource,
}

#[derive(Debug, Clone, Serialize)]
pub struct RowReport {
    /// RE of the TRM output in the coefficient frame.
    pub trm_re: f64,
    /// RE of the rounded direction in the coefficient frame.
    pub rounded_re: f64,
    /// Index of the coefficient row the rounded direction exposes.
    pub row: usize,
    /// `q^T Yhat` has exactly the support of that row.
    pub support_match: bool,
    pub trm_iterations: usize,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Timings {
    pub generate_ms: f64,
    pub precondition_ms: f64,
    pub recover_ms: f64,
    pub reconstruct_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineReport {
    pub config: PipelineConfig,
    pub dictionary: DictionaryKind,
    pub theta_used: f64,
    pub rows: Vec<RowReport>,
    pub match_error: Option<f64>,
    pub residual: Option<f64>,
    pub timings: Timings,
    pub error: Option<String>,
}

impl PipelineReport {
    /// Exact recovery at the given tolerance on both match error and residual.
    pub fn exact(&self, tol: f64) -> bool {
        matches!((self.match_error, self.residual), (Some(m), Some(r)) if m <= tol && r <= tol)
    }
}

/// Relative threshold under which entries of `q^T Y` count as zero.
pub const SUPPORT_RTOL: f64 = 1e-9;

/// Support pattern of a row vector, relative to its largest entry.
pub fn support_of(v: &[f64]) -> Vec<bool> {
    let scale = v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    v.iter().map(|x| x.abs() > SUPPORT_RTOL * scale).collect()
}

/// Reconstruction error `min_i min(|q - e_i|, |q + e_i|)` and the minimizing `i`.
pub fn reconstruction_error_index(q: &DVector<f64>) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0);
    for i in 0..q.len() {
        // |q -+ e_i|^2 = |q|^2 + 1 -+ 2 q_i
        let d2 = (q.norm_squared() + 1.0 - 2.0 * q[i].abs()).max(0.0);
        let d = d2.sqrt();
        if d < best.0 {
            best = (d, i);
        }
    }
    best
}

fn pilot_theta(
    ybar1: &DataMatrix,
    mu: SmoothingParams,
    cfg: &TrmConfig,
    seed: u64,
) -> Result<f64> {
    let q0 = random_sphere_point(ybar1.dim(), derive_seed(seed, &[u64::MAX]));
    let res = minimize(ybar1, mu, cfg, &q0)?;
    let rounded = lp_round_certified(&RoundingProblem {
        yhat: ybar1,
        r: res.q_final.into_vector(),
    })?;
    let row = ybar1.entries.transpose() * rounded.q.as_vector();
    let supp = support_of(row.as_slice());
    let density = supp.iter().filter(|s| **s).count() as f64 / supp.len() as f64;
    if !(density > 0.0 && density < 1.0) {
        return Err(SdctError::NumericFailure(format!("pilot support density {density}")));
    }
    Ok(density)
}

/// Generates an instance, preconditions if complete, recovers every row,
/// reconstructs and scores against the ground truth.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineReport> {
    let mu = SmoothingParams::new(cfg.mu)?;
    cfg.trm.validate()?;
    let mut timings = Timings::default();

    let t0 = Instant::now();
    let a0 = if cfg.kappa == 1.0 {
        make_orthogonal_dictionary(cfg.n, derive_seed(cfg.seed, &[1]))?
    } else {
        make_complete_dictionary(cfg.n, cfg.kappa, derive_seed(cfg.seed, &[1]))?
    };
    let x0 = sample_bg(cfg.n, cfg.p, cfg.theta, derive_seed(cfg.seed, &[2]))?;
    let y = synthesize(&a0, &x0)?;
    timings.generate_ms = ms(t0);

    let t1 = Instant::now();
    let (yhat, frame, theta_used) = match a0.kind {
        DictionaryKind::Orthogonal => (y.clone(), a0.entries.clone(), cfg.theta),
        DictionaryKind::Complete => {
            let theta = match cfg.theta_source {
                ThetaSource::Known => cfg.theta,
                ThetaSource::Pilot => {
                    let ybar1 = precondition(&y, 1.0)?;
                    pilot_theta(&ybar1, mu, &cfg.trm, cfg.seed)?
                }
            };
            let w = whitening_operator(&y.entries, theta)?;
            let yhat = DataMatrix {
                entries: &w * &y.entries,
                provenance: y.provenance.clone(),
            };
            (yhat, w * &a0.entries, theta)
        }
    };
    timings.precondition_ms = ms(t1);

    let t2 = Instant::now();
    let recovery = recover_rows(&yhat, mu, &cfg.trm, derive_seed(cfg.seed, &[3]));
    timings.recover_ms = ms(t2);

    // Directions expressed in the coefficient frame: Yhat = M X0, so
    // q^T Yhat = (M^T q)^T X0.
    let rows: Vec<RowReport> = recovery
        .stages
        .iter()
        .map(|s| {
            let trm_dir = (frame.transpose() * &s.r).normalize();
            let rounded_dir = (frame.transpose() * s.q.as_vector()).normalize();
            let (trm_re, _) = reconstruction_error_index(&trm_dir);
            let (rounded_re, row) = reconstruction_error_index(&rounded_dir);
            let est = yhat.entries.transpose() * s.q.as_vector();
            let support_match = support_of(est.as_slice())
                .iter()
                .zip(x0.support.row(row).iter())
                .all(|(a, b)| a == b);
            RowReport {
                trm_re,
                rounded_re,
                row,
                support_match,
                trm_iterations: s.trm_iterations,
            }
        })
        .collect();

    let mut report = PipelineReport {
        config: cfg.clone(),
        dictionary: a0.kind,
        theta_used,
        rows,
        match_error: None,
        residual: None,
        timings,
        error: recovery.error.clone(),
    };
    if recovery.is_complete(cfg.n) {
        let t3 = Instant::now();
        match reconstruct(&y, &recovery.rows(), &yhat) {
            Ok(mut result) => {
                let m = result.assign_against(&a0.entries).err;
                report.match_error = Some(m);
                report.residual = Some(result.residual);
            }
            Err(e) => report.error = Some(e.to_string()),
        }
        report.timings.reconstruct_ms = ms(t3);
    }
    info!(
        "pipeline n={} p={} kappa={}: match_error={:?} residual={:?}",
        cfg.n, cfg.p, cfg.kappa, report.match_error, report.residual
    );
    Ok(report)
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// `U V^T` of a dictionary; exposed for perturbation studies.
pub fn orthogonal_target(a0: &DictionaryMatrix) -> Result<DMatrix<f64>> {
    polar_factor(&a0.entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{identity_dictionary, sample_bg};

    #[test]
    fn complement_is_orthonormal() {
        let rows = vec![
            SpherePoint::from_slice(&[1.0, 1.0, 0.0, 0.0]).unwrap(),
            SpherePoint::from_slice(&[0.0, 1.0, 1.0, 0.0]).unwrap(),
        ];
        let b = orthonormalize(&rows);
        let u = orthonormal_complement(&b);
        assert_eq!(u.shape(), (4, 2));
        assert!((u.transpose() * &u - DMatrix::identity(2, 2)).amax() < 1e-14);
        assert!((b.transpose() * &u).amax() < 1e-14);
        assert_eq!(u, orthonormal_complement(&b));
    }

    #[test]
    fn reconstruct_from_true_rows() {
        let a0 = make_complete_dictionary(4, 3.0, 5).unwrap();
        let x0 = sample_bg(4, 200, 0.3, 6).unwrap();
        let y = synthesize(&a0, &x0).unwrap();
        // Rows of A0^{-1} expose rows of X0 exactly.
        let inv = a0.entries.clone().try_inverse().unwrap();
        let rows: Vec<SpherePoint> = (0..4)
            .map(|i| SpherePoint::new(inv.row(i).transpose()).unwrap())
            .collect();
        let mut res = reconstruct(&y, &rows, &y).unwrap();
        assert!(res.residual <= 1e-12);
        assert!(res.assign_against(&a0.entries).err <= 1e-10);
        let mut shuffled = rows.clone();
        shuffled.reverse();
        let res2 = reconstruct(&y, &shuffled, &y).unwrap();
        assert!((res2.residual - res.residual).abs() <= 1e-14);
        assert!(reconstruct(&y, &rows[..3], &y).is_err());
        let dup = vec![rows[0].clone(), rows[0].clone(), rows[1].clone(), rows[2].clone()];
        assert!(matches!(reconstruct(&y, &dup, &y), Err(SdctError::RankDeficiency(_))));
    }

    #[test]
    fn re_closed_forms() {
        let e3 = SpherePoint::basis(4, 2);
        assert_eq!(reconstruction_error_index(e3.as_vector()), (0.0, 2));
        let mid = DVector::from_vec(vec![1.0, 1.0, 0.0]).normalize();
        let (re, _) = reconstruction_error_index(&mid);
        assert!((re - (2.0 - 2f64.sqrt()).sqrt()).abs() < 1e-15);
        let neg = -SpherePoint::basis(3, 0).into_vector();
        assert_eq!(reconstruction_error_index(&neg).0, 0.0);
    }

    #[test]
    fn deflation_on_identity_dictionary() {
        let n = 6;
        let x0 = sample_bg(n, 5 * n * n * n, 0.15, 8).unwrap();
        let y = synthesize(&identity_dictionary(n), &x0).unwrap();
        let mu = SmoothingParams::new(0.01).unwrap();
        let rec = recover_rows(&y, mu, &TrmConfig::default(), 9);
        assert!(rec.is_complete(n), "{:?}", rec.error);
        let rows = rec.rows();
        for r in &rows {
            assert_eq!(reconstruction_error_index(r.as_vector()).0, 0.0);
        }
        for i in 0..n {
            for j in 0..i {
                assert!(rows[i].as_vector().dot(rows[j].as_vector()).abs() <= 1e-8);
            }
        }
    }
}
