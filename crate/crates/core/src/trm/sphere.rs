//! Tangent spaces, the exponential map and the second-order model on the sphere.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SdctError};
use crate::model::DataMatrix;
use crate::objective::{evaluate, Order, SmoothingParams, SpherePoint};
use crate::par::Execution;

/// Relative tolerance for `|<delta, q>| <= TANGENT_TOL * |delta|`.
pub const TANGENT_TOL: f64 = 1e-8;

/// Orthonormal basis `U` (n x (n-1)) of the tangent space at `q`.
///
/// Columns 2..n of the Householder reflector mapping `q` to `-sign(q_1) e_1`.
pub fn tangent_basis(q: &SpherePoint) -> DMatrix<f64> {
    let q = q.as_vector();
    let n = q.len();
    let s = if q[0] >= 0.0 { 1.0 } else { -1.0 };
    let mut v = q.clone();
    v[0] += s;
    let vv = v.norm_squared();
    let mut u = DMatrix::zeros(n, n - 1);
    for j in 1..n {
        let coef = 2.0 * v[j] / vv;
        for i in 0..n {
            let e = if i == j { 1.0 } else { 0.0 };
            u[(i, j - 1)] = e - coef * v[i];
        }
    }
    u
}

fn check_tangent(q: &SpherePoint, delta: &DVector<f64>) -> Result<()> {
    if delta.len() != q.dim() {
        return Err(SdctError::InvalidShape(format!(
            "tangent vector has length {} but q has {}",
            delta.len(),
            q.dim()
        )));
    }
    let inner = delta.dot(q.as_vector());
    if inner.abs() > TANGENT_TOL * delta.norm() {
        return Err(SdctError::InvalidTangent(inner));
    }
    Ok(())
}

/// `exp_q(delta) = q cos|delta| + delta/|delta| sin|delta|`, renormalized.
pub fn retract(q: &SpherePoint, delta: &DVector<f64>) -> Result<SpherePoint> {
    check_tangent(q, delta)?;
    let t = delta.norm();
    if t == 0.0 {
        return Ok(q.clone());
    }
    let moved = q.as_vector() * t.cos() + delta * (t.sin() / t);
    SpherePoint::new(moved)
}

/// `f(q) + <grad f, delta> + 1/2 delta^T (hess f - <grad f, q> I) delta`.
pub fn quadratic_model(
    q: &SpherePoint,
    y: &DataMatrix,
    mu: SmoothingParams,
    delta: &DVector<f64>,
) -> Result<f64> {
    check_tangent(q, delta)?;
    let e = evaluate(&y.entries, q.as_vector().as_slice(), mu, Order::Hessian, Execution::default())?;
    let (g, h) = (e.grad.unwrap(), e.hess.unwrap());
    let gq = g.dot(q.as_vector());
    let curv = delta.dot(&(&h * delta)) - gq * delta.norm_squared();
    Ok(e.value + g.dot(delta) + 0.5 * curv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_orthogonal_dictionary, sample_bg, synthesize};
    use crate::objective::{f_value, tangent_projector};
    use crate::rng::rng_from_seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_unit(n: usize, rng: &mut crate::rng::SeededRng) -> SpherePoint {
        SpherePoint::new(DVector::from_fn(n, |_, _| rng.sample(StandardNormal))).unwrap()
    }

    #[test]
    fn basis_at_e1_is_standard() {
        let u = tangent_basis(&SpherePoint::basis(4, 0));
        let mut expected = DMatrix::zeros(4, 3);
        for j in 0..3 {
            expected[(j + 1, j)] = 1.0;
        }
        assert_eq!(u, expected);
    }

    #[test]
    fn basis_is_orthonormal_and_tangent() {
        let mut rng = rng_from_seed(1);
        for n in [2, 3, 7, 20] {
            let q = random_unit(n, &mut rng);
            let u = tangent_basis(&q);
            let gram = u.transpose() * &u;
            assert!((gram - DMatrix::identity(n - 1, n - 1)).amax() < 1e-14);
            assert!((u.transpose() * q.as_vector()).norm() <= 1e-13);
            assert_eq!(u, tangent_basis(&q));
            let q_neg = q.neg();
            assert!((tangent_basis(&q_neg).transpose() * q_neg.as_vector()).norm() <= 1e-13);
        }
    }

    #[test]
    fn retraction_identities() {
        let e1 = SpherePoint::basis(3, 0);
        assert_eq!(retract(&e1, &DVector::zeros(3)).unwrap(), e1);
        let mut d = DVector::zeros(3);
        d[1] = std::f64::consts::FRAC_PI_2;
        let r = retract(&e1, &d).unwrap();
        assert!((r.as_vector() - SpherePoint::basis(3, 1).as_vector()).amax() <= 1e-15);
        let mut rng = rng_from_seed(2);
        for _ in 0..200 {
            let q = random_unit(6, &mut rng);
            let raw = DVector::from_fn(6, |_, _| rng.sample::<f64, _>(StandardNormal));
            let delta = tangent_projector(q.as_vector()) * raw * rng.random::<f64>();
            let moved = retract(&q, &delta).unwrap();
            let chord = (moved.as_vector() - q.as_vector()).norm();
            assert!((chord - 2.0 * (delta.norm() / 2.0).sin()).abs() < 1e-14);
            assert!((moved.as_vector().norm() - 1.0).abs() <= 1e-15);
        }
        assert!(matches!(
            retract(&e1, &DVector::from_vec(vec![1.0, 0.0, 0.0])),
            Err(SdctError::InvalidTangent(_))
        ));
    }

    #[test]
    fn model_identities() {
        let a = make_orthogonal_dictionary(5, 3).unwrap();
        let x = sample_bg(5, 300, 0.3, 4).unwrap();
        let y = synthesize(&a, &x).unwrap();
        let mu = SmoothingParams::new(0.1).unwrap();
        let mut rng = rng_from_seed(5);
        let q = random_unit(5, &mut rng);
        let f0 = f_value(&q, &y, mu).unwrap();
        assert!((quadratic_model(&q, &y, mu, &DVector::zeros(5)).unwrap() - f0).abs() < 1e-15);
        let raw = DVector::from_fn(5, |_, _| rng.sample::<f64, _>(StandardNormal));
        let delta = tangent_projector(q.as_vector()) * raw * 0.1;
        let plus = quadratic_model(&q, &y, mu, &delta).unwrap();
        let minus = quadratic_model(&q, &y, mu, &(-&delta)).unwrap();
        let e = evaluate(&y.entries, q.as_vector().as_slice(), mu, Order::Hessian, Execution::Sequential).unwrap();
        let (g, h) = (e.grad.unwrap(), e.hess.unwrap());
        let quad = delta.dot(&(&h * &delta)) - g.dot(q.as_vector()) * delta.norm_squared();
        assert!((plus + minus - 2.0 * f0 - quad).abs() < 1e-12);
    }

    #[test]
    fn model_gap_is_third_order() {
        // Richardson-style check: halving the step shrinks |model - f(exp)| by ~8.
        let a = make_orthogonal_dictionary(6, 13).unwrap();
        let x = sample_bg(6, 2000, 0.3, 14).unwrap();
        let y = synthesize(&a, &x).unwrap();
        let mu = SmoothingParams::new(0.5).unwrap();
        let mut rng = rng_from_seed(15);
        for _ in 0..10 {
            let q = random_unit(6, &mut rng);
            let raw = DVector::from_fn(6, |_, _| rng.sample::<f64, _>(StandardNormal));
            let dir = (tangent_projector(q.as_vector()) * raw).normalize();
            let gap = |t: f64| {
                let d = &dir * t;
                quadratic_model(&q, &y, mu, &d).unwrap() - f_value(&retract(&q, &d).unwrap(), &y, mu).unwrap()
            };
            let ratio = gap(0.02) / gap(0.01);
            assert!((6.0..=10.0).contains(&ratio), "ratio {ratio}");
        }
    }
}
