//! Comparison of dictionaries up to signed permutation and column scale.

use nalgebra::DMatrix;
use serde::Serialize;

/// Result of matching an estimate against a reference dictionary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    /// Largest angle (radians) between a reference column and its match.
    pub err: f64,
    /// `perm[j]` is the estimate column matched to reference column `j`.
    pub perm: Vec<usize>,
    /// Sign applied to the matched estimate column.
    pub signs: Vec<f64>,
}

/// Minimum-cost perfect assignment on a square cost matrix (Hungarian method
/// with row/column potentials). Returns `assign[row] = col`.
pub fn hungarian(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "assignment needs a square cost matrix");
    // 1-based arrays, slot 0 is the virtual column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        col_owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        if col_owner[j] > 0 {
            assign[col_owner[j] - 1] = j - 1;
        }
    }
    assign
}

fn normalized_columns(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = a.clone();
    for mut c in out.column_iter_mut() {
        let norm = c.norm();
        if norm > 0.0 {
            c /= norm;
        }
    }
    out
}

/// Angle between unit vectors `a` and `b`, stable near zero.
fn angle(a: nalgebra::DVectorView<'_, f64>, b: nalgebra::DVectorView<'_, f64>) -> f64 {
    let chord = (a - b).norm();
    2.0 * (0.5 * chord).min(1.0).asin()
}

pub fn match_error(a_hat: &DMatrix<f64>, a0: &DMatrix<f64>) -> MatchResult {
    let n = a0.ncols();
    assert_eq!(a_hat.shape(), a0.shape(), "dictionaries must have the same shape");
    let est = normalized_columns(a_hat);
    let reference = normalized_columns(a0);
    let corr = reference.transpose() * &est;
    let cost = corr.map(|c| -c.abs());
    let perm = hungarian(&cost);
    let mut signs = Vec::with_capacity(n);
    let mut err = 0.0f64;
    for (j, &k) in perm.iter().enumerate() {
        let s = if corr[(j, k)] < 0.0 { -1.0 } else { 1.0 };
        let signed = est.column(k) * s;
        err = err.max(angle(signed.as_view(), reference.column(j)));
        signs.push(s);
    }
    MatchResult { err, perm, signs }
}
