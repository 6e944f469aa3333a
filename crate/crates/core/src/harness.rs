//! Phase-transition benchmark for recovering a single sparse row.
//!
//! Each trial draws `X0` with exactly `k` nonzeros per column, sets `Y = X0`
//! (identity dictionary), runs the trust-region method from a uniform random
//! start and scores the output by its distance to the nearest signed basis
//! vector. Trials run on the rayon pool; all randomness is derived up front
//! from `(master_seed, n, k, trial)` and results are merged in canonical
//! order, so tables do not depend on the number of workers.

use std::io::{Read, Write};
use std::time::Instant;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SdctError};
use crate::model::{identity_dictionary, sample_bg, sample_fixed_k, synthesize, CoefficientMode};
use crate::objective::{SmoothingParams, SpherePoint};
use crate::par::{map_indices, Execution};
use crate::recovery::pipeline::{random_sphere_point, reconstruction_error_index};
use crate::rng::derive_seed;
use crate::trm::{minimize_with, Termination, TrmConfig};

/// `min_i min(|q - e_i|, |q + e_i|)`.
pub fn reconstruction_error(q_hat: &SpherePoint) -> f64 {
    reconstruction_error_index(q_hat.as_vector()).0
}

/// Number of samples as a function of the dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PRule {
    /// `p = factor * n^3`.
    Cubic { factor: usize },
    Fixed { p: usize },
}

impl Default for PRule {
    fn default() -> Self {
        PRule::Cubic { factor: 5 }
    }
}

impl PRule {
    pub fn samples(self, n: usize) -> usize {
        match self {
            PRule::Cubic { factor } => factor * n * n * n,
            PRule::Fixed { p } => p,
        }
    }
}

/// Which coefficient model a sweep draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sparsity {
    /// Exactly `k` nonzeros per column.
    #[default]
    FixedK,
    /// Bernoulli-Gaussian with `theta = k / n`.
    BernoulliGaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub n_values: Vec<usize>,
    /// Sparsity levels; `None` sweeps `1..=n` for every `n`.
    pub k_values: Option<Vec<usize>>,
    pub trials: usize,
    pub mu: f64,
    pub p_rule: PRule,
    pub master_seed: u64,
    pub sparsity: Sparsity,
    pub trm: TrmConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            n_values: vec![10, 15, 20, 25, 30],
            k_values: None,
            trials: 5,
            mu: 1e-2,
            p_rule: PRule::default(),
            master_seed: 0,
            sparsity: Sparsity::FixedK,
            trm: TrmConfig::default(),
        }
    }
}

impl BenchConfig {
    /// The full sweep `n, k` up to 120 in steps of 5 (`k` from 1).
    pub fn full_grid() -> Self {
        Self {
            n_values: (1..=24).map(|i| 5 * i).collect(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(SdctError::InvalidParameter("trials must be at least 1".into()));
        }
        if !(self.mu > 0.0) {
            return Err(SdctError::InvalidParameter(format!("mu must be positive, got {}", self.mu)));
        }
        if self.n_values.is_empty() || self.n_values.contains(&0) {
            return Err(SdctError::InvalidParameter("n_values must be non-empty and positive".into()));
        }
        if let Some(ks) = &self.k_values {
            if ks.is_empty() || ks.contains(&0) {
                return Err(SdctError::InvalidParameter("k_values must be non-empty and positive".into()));
            }
        }
        self.trm.validate()
    }

    /// `(n, k)` cells in canonical order; `k > n` is skipped.
    pub fn cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for &n in &self.n_values {
            let ks: Vec<usize> = match &self.k_values {
                Some(ks) => ks.iter().copied().filter(|&k| k <= n).collect(),
                None => (1..=n).collect(),
            };
            out.extend(ks.into_iter().map(|k| (n, k)));
        }
        out
    }
}

/// One CSV row of a phase table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub n: usize,
    pub k: usize,
    pub trial: usize,
    pub seed: u64,
    pub re: f64,
    pub success: bool,
    pub iters: usize,
    pub runtime_ms: f64,
}

impl PhaseRow {
    /// Equality ignoring wall-clock time.
    pub fn same_outcome(&self, other: &PhaseRow) -> bool {
        (self.n, self.k, self.trial, self.seed, self.success, self.iters)
            == (other.n, other.k, other.trial, other.seed, other.success, other.iters)
            && self.re.to_bits() == other.re.to_bits()
    }
}

/// How a trial ended.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialOutcome {
    Converged,
    MaxIter,
    SubproblemFailure(String),
    Error(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub row: PhaseRow,
    pub outcome: TrialOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseCell {
    pub n: usize,
    pub k: usize,
    pub trials: usize,
    pub successes: usize,
    pub mean_re: f64,
    pub seeds: Vec<u64>,
    pub sparsity: Sparsity,
    pub records: Vec<TrialRecord>,
}

impl PhaseCell {
    fn from_records(n: usize, k: usize, sparsity: Sparsity, records: Vec<TrialRecord>) -> Self {
        let finite: Vec<f64> = records.iter().map(|r| r.row.re).filter(|v| v.is_finite()).collect();
        let mean_re = if finite.is_empty() {
            f64::NAN
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        Self {
            n,
            k,
            trials: records.len(),
            successes: records.iter().filter(|r| r.row.success).count(),
            mean_re,
            seeds: records.iter().map(|r| r.row.seed).collect(),
            sparsity,
            records,
        }
    }
}

/// Seed of one trial.
pub fn trial_seed(master: u64, n: usize, k: usize, trial: usize) -> u64 {
    derive_seed(master, &[n as u64, k as u64, trial as u64])
}

/// Runs one trial. Errors are recorded, never propagated.
pub fn run_trial(cfg: &BenchConfig, n: usize, k: usize, trial: usize) -> TrialRecord {
    let seed = trial_seed(cfg.master_seed, n, k, trial);
    let start = Instant::now();
    let p = cfg.p_rule.samples(n);
    let result = (|| {
        let mu = SmoothingParams::new(cfg.mu)?;
        let x0 = match cfg.sparsity {
            Sparsity::FixedK => sample_fixed_k(n, p, k, derive_seed(seed, &[0]))?,
            Sparsity::BernoulliGaussian => {
                sample_bg(n, p, k as f64 / n as f64, derive_seed(seed, &[0]))?
            }
        };
        debug_assert!(matches!(
            (cfg.sparsity, x0.mode),
            (Sparsity::FixedK, CoefficientMode::FixedK { .. }) | (Sparsity::BernoulliGaussian, CoefficientMode::Bg { .. })
        ));
        let y = synthesize(&identity_dictionary(n), &x0)?;
        let q0 = random_sphere_point(n, derive_seed(seed, &[1]));
        minimize_with(&y, mu, &cfg.trm, &q0, Execution::Sequential)
    })();
    let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
    let (re, iters, outcome) = match result {
        Ok(res) => {
            let re = reconstruction_error(&res.q_final);
            let outcome = match (res.termination, res.failure) {
                (Termination::SubproblemFailure, msg) => {
                    TrialOutcome::SubproblemFailure(msg.unwrap_or_default())
                }
                (Termination::MaxIter, _) => TrialOutcome::MaxIter,
                (Termination::ProgressTol, _) => TrialOutcome::Converged,
            };
            (re, res.iterates.len(), outcome)
        }
        Err(e) => (f64::NAN, 0, TrialOutcome::Error(e.to_string())),
    };
    TrialRecord {
        row: PhaseRow {
            n,
            k,
            trial,
            seed,
            re,
            success: re <= cfg.mu,
            iters,
            runtime_ms,
        },
        outcome,
    }
}

pub fn run_phase_transition(cfg: &BenchConfig) -> Result<Vec<PhaseCell>> {
    run_phase_transition_with(cfg, Execution::default())
}

/// [`run_phase_transition`] with an explicit execution mode for the trial fan-out.
pub fn run_phase_transition_with(cfg: &BenchConfig, exec: Execution) -> Result<Vec<PhaseCell>> {
    cfg.validate()?;
    let cells = cfg.cells();
    let jobs: Vec<(usize, usize, usize)> = cells
        .iter()
        .flat_map(|&(n, k)| (0..cfg.trials).map(move |t| (n, k, t)))
        .collect();
    info!("phase sweep: {} cells, {} trials", cells.len(), jobs.len());
    let records = map_indices(jobs.len(), exec, |i| {
        let (n, k, t) = jobs[i];
        let rec = run_trial(cfg, n, k, t);
        debug!("n={n} k={k} trial={t}: re={:.3e}", rec.row.re);
        rec
    });
    let mut records = records.into_iter();
    Ok(cells
        .into_iter()
        .map(|(n, k)| {
            let recs: Vec<TrialRecord> = records.by_ref().take(cfg.trials).collect();
            PhaseCell::from_records(n, k, cfg.sparsity, recs)
        })
        .collect())
}

/// All rows of a sweep in canonical `(n, k, trial)` order.
pub fn phase_rows(cells: &[PhaseCell]) -> Vec<PhaseRow> {
    cells
        .iter()
        .flat_map(|c| c.records.iter().map(|r| r.row.clone()))
        .collect()
}

pub const PHASE_HEADER: [&str; 8] = ["n", "k", "trial", "seed", "re", "success", "iters", "runtime_ms"];

/// Writes `n,k,trial,seed,re,success,iters,runtime_ms` with a header row.
pub fn write_phase_csv<W: Write>(rows: &[PhaseRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(PHASE_HEADER).map_err(csv_error)?;
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_phase_csv<R: Read>(input: R) -> Result<Vec<PhaseRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_error)?;
    if header.iter().ne(PHASE_HEADER) {
        return Err(SdctError::Format(format!("unexpected phase table header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(csv_error)).collect()
}

pub(crate) fn csv_error(e: csv::Error) -> SdctError {
    if e.is_io_error() {
        SdctError::Io(e.to_string())
    } else {
        SdctError::Format(e.to_string())
    }
}

/// Endpoint check of the aggregate trend: the largest `k` at which every trial
/// succeeds is not above the smallest `k` at which a trial fails, per `n`.
pub fn monotone_in_k(cells: &[PhaseCell]) -> Vec<(usize, bool)> {
    let mut ns: Vec<usize> = cells.iter().map(|c| c.n).collect();
    ns.dedup();
    ns.into_iter()
        .map(|n| {
            let mine: Vec<&PhaseCell> = cells.iter().filter(|c| c.n == n).collect();
            let largest_ok = mine.iter().filter(|c| c.successes == c.trials).map(|c| c.k).max();
            let smallest_bad = mine.iter().filter(|c| c.successes < c.trials).map(|c| c.k).min();
            let ok = match (largest_ok, smallest_bad) {
                (Some(a), Some(b)) => b >= a,
                _ => true,
            };
            (n, ok)
        })
        .collect()
}
