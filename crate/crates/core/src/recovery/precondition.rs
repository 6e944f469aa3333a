//! Whitening of complete-dictionary data.

use nalgebra::DMatrix;

use crate::error::{Result, SdctError};
use crate::model::{DataMatrix, DictionaryMatrix};

/// `((1/(p theta)) Y Y^T)^{-1/2}` via a symmetric eigendecomposition.
pub fn whitening_operator(y: &DMatrix<f64>, theta: f64) -> Result<DMatrix<f64>> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(SdctError::InvalidParameter(format!("theta must be positive, got {theta}")));
    }
    let p = y.ncols();
    if p == 0 {
        return Err(SdctError::EmptyData);
    }
    let gram = (y * y.transpose()) / (p as f64 * theta);
    let eig = gram.symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    // Eigenvalues of the Gram are squared singular values of Y.
    let ratio = if max > 0.0 { (min.max(0.0) / max).sqrt() } else { 0.0 };
    if !(ratio > 1e-12) {
        return Err(SdctError::SingularGram(ratio));
    }
    let inv_sqrt = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (j, s) in inv_sqrt.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*s);
    }
    Ok(scaled * v.transpose())
}

/// `Ybar = ((1/(p theta)) Y Y^T)^{-1/2} Y`.
pub fn precondition(y: &DataMatrix, theta: f64) -> Result<DataMatrix> {
    let w = whitening_operator(&y.entries, theta)?;
    Ok(DataMatrix {
        entries: w * &y.entries,
        provenance: y.provenance.clone(),
    })
}

/// `U V^T` for the SVD `A = U S V^T`: the orthogonal matrix preconditioning aims at.
pub fn polar_factor(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = a.clone().svd(true, true);
    match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => Ok(u * vt),
        _ => Err(SdctError::NumericFailure("SVD did not return singular vectors".into())),
    }
}

/// `|Ybar - U V^T X0|_F / |X0|_F`: the relative size of the whitening
/// perturbation for a synthetic instance.
pub fn preconditioning_perturbation(
    a0: &DictionaryMatrix,
    x0: &DMatrix<f64>,
    theta: f64,
) -> Result<f64> {
    let y = &a0.entries * x0;
    let ybar = whitening_operator(&y, theta)? * &y;
    let target = polar_factor(&a0.entries)? * x0;
    Ok((ybar - target).norm() / x0.norm())
}
