//! Ground-truth generators: dictionaries, sparse coefficients and synthetic
//! observations `Y = A0 X0`.
//!
//! All generators are pure functions of their arguments. Randomness comes from
//! [`crate::rng`], so a seed reproduces the same matrices on every platform.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SdctError};
use crate::rng::{derive_seed, rng_from_seed, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DictionaryKind {
    Orthogonal,
    Complete,
}

/// Square invertible dictionary.
#[derive(Debug, Clone, PartialEq)]
pub struct DictionaryMatrix {
    pub entries: DMatrix<f64>,
    pub kind: DictionaryKind,
    /// Requested condition number (1 for orthogonal dictionaries).
    pub kappa: f64,
}

impl DictionaryMatrix {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// `max_ij |(A^T A - I)_ij|`.
    pub fn orthogonality_residual(&self) -> f64 {
        gram_identity_residual(&self.entries)
    }

    /// Measured `sigma_max / sigma_min`.
    pub fn condition_number(&self) -> f64 {
        let sv = self.entries.clone().singular_values();
        sv.max() / sv.min()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientMode {
    /// Bernoulli-Gaussian with rate theta.
    Bg { theta: f64 },
    /// Exactly `k` nonzeros per column with uniformly random support.
    FixedK { k: usize },
}

/// Sparse coefficient matrix with its support mask.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix {
    pub entries: DMatrix<f64>,
    pub support: DMatrix<bool>,
    pub mode: CoefficientMode,
    pub seed: u64,
}

impl CoefficientMatrix {
    pub fn support_fraction(&self) -> f64 {
        let nnz = self.support.iter().filter(|&&s| s).count();
        nnz as f64 / self.support.len() as f64
    }

    pub fn column_support_size(&self, j: usize) -> usize {
        self.support.column(j).iter().filter(|&&s| s).count()
    }
}

/// Where a data matrix came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Synthetic {
        dictionary: DictionaryKind,
        kappa: f64,
        coefficients: CoefficientMode,
        coefficient_seed: u64,
    },
    External,
}

/// Observation matrix, one sample per column.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    pub entries: DMatrix<f64>,
    pub provenance: Provenance,
}

impl DataMatrix {
    pub fn new(entries: DMatrix<f64>) -> Self {
        Self {
            entries,
            provenance: Provenance::External,
        }
    }

    /// Ambient dimension `n`.
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// Number of samples `p`.
    pub fn samples(&self) -> usize {
        self.entries.ncols()
    }
}

pub(crate) fn gram_identity_residual(a: &DMatrix<f64>) -> f64 {
    let g = a.transpose() * a;
    let n = g.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut SeededRng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Haar-like orthogonal matrix: QR of a Gaussian matrix, with columns signed
/// so that `R` has a positive diagonal.
fn haar_orthogonal(n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_from_seed(seed);
    let g = gaussian_matrix(n, n, &mut rng);
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn make_orthogonal_dictionary(n: usize, seed: u64) -> Result<DictionaryMatrix> {
    if n < 2 {
        return Err(SdctError::InvalidDimension(format!(
            "dictionary dimension must be >= 2, got {n}"
        )));
    }
    Ok(DictionaryMatrix {
        entries: haar_orthogonal(n, seed),
        kind: DictionaryKind::Orthogonal,
        kappa: 1.0,
    })
}

/// `U diag(s) V^T` with `s` geometric from 1 down to `1/kappa`.
pub fn make_complete_dictionary(n: usize, kappa: f64, seed: u64) -> Result<DictionaryMatrix> {
    if n < 2 {
        return Err(SdctError::InvalidDimension(format!(
            "dictionary dimension must be >= 2, got {n}"
        )));
    }
    if !(kappa >= 1.0) || !kappa.is_finite() {
        return Err(SdctError::InvalidParameter(format!(
            "kappa must be a finite value >= 1, got {kappa}"
        )));
    }
    let u = haar_orthogonal(n, derive_seed(seed, &[0]));
    let v = haar_orthogonal(n, derive_seed(seed, &[1]));
    let spectrum: Vec<f64> = (0..n)
        .map(|i| kappa.powf(-(i as f64) / (n - 1) as f64))
        .collect();
    let mut us = u;
    for (j, s) in spectrum.iter().enumerate() {
        us.column_mut(j).scale_mut(*s);
    }
    Ok(DictionaryMatrix {
        entries: us * v.transpose(),
        kind: DictionaryKind::Complete,
        kappa,
    })
}

/// Bernoulli-Gaussian coefficients. Entries are visited in column-major order;
/// each draws a uniform for the indicator and a standard normal for the value.
pub fn sample_bg(n: usize, p: usize, theta: f64, seed: u64) -> Result<CoefficientMatrix> {
    if n == 0 || p == 0 {
        return Err(SdctError::InvalidDimension(format!(
            "coefficient matrix must be non-empty, got {n}x{p}"
        )));
    }
    if !(theta > 0.0 && theta < 1.0) {
        return Err(SdctError::InvalidParameter(format!(
            "theta must lie in (0, 1), got {theta}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut entries = DMatrix::zeros(n, p);
    let mut support = DMatrix::from_element(n, p, false);
    for j in 0..p {
        for i in 0..n {
            let on = rng.random::<f64>() < theta;
            let v: f64 = rng.sample(StandardNormal);
            if on {
                support[(i, j)] = true;
                entries[(i, j)] = v;
            }
        }
    }
    Ok(CoefficientMatrix {
        entries,
        support,
        mode: CoefficientMode::Bg { theta },
        seed,
    })
}

/// Exactly `k` nonzeros per column, support uniform over k-subsets.
pub fn sample_fixed_k(n: usize, p: usize, k: usize, seed: u64) -> Result<CoefficientMatrix> {
    if n == 0 || p == 0 {
        return Err(SdctError::InvalidDimension(format!(
            "coefficient matrix must be non-empty, got {n}x{p}"
        )));
    }
    if k == 0 || k > n {
        return Err(SdctError::InvalidParameter(format!(
            "k must satisfy 1 <= k <= n = {n}, got {k}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut entries = DMatrix::zeros(n, p);
    let mut support = DMatrix::from_element(n, p, false);
    for j in 0..p {
        let mut rows = rand::seq::index::sample(&mut rng, n, k).into_vec();
        rows.sort_unstable();
        for i in rows {
            support[(i, j)] = true;
            entries[(i, j)] = rng.sample(StandardNormal);
        }
    }
    Ok(CoefficientMatrix {
        entries,
        support,
        mode: CoefficientMode::FixedK { k },
        seed,
    })
}

pub fn synthesize(a0: &DictionaryMatrix, x0: &CoefficientMatrix) -> Result<DataMatrix> {
    if a0.entries.ncols() != x0.entries.nrows() {
        return Err(SdctError::InvalidShape(format!(
            "dictionary is {}x{} but coefficients are {}x{}",
            a0.entries.nrows(),
            a0.entries.ncols(),
            x0.entries.nrows(),
            x0.entries.ncols()
        )));
    }
    Ok(DataMatrix {
        entries: &a0.entries * &x0.entries,
        provenance: Provenance::Synthetic {
            dictionary: a0.kind,
            kappa: a0.kappa,
            coefficients: x0.mode,
            coefficient_seed: x0.seed,
        },
    })
}

/// Identity dictionary, used by the benchmark (A0 = I) setting.
pub fn identity_dictionary(n: usize) -> DictionaryMatrix {
    DictionaryMatrix {
        entries: DMatrix::identity(n, n),
        kind: DictionaryKind::Orthogonal,
        kappa: 1.0,
    }
}
