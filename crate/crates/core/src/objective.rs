//! Smoothed sparsity objective over the sphere.
//!
//! `f(q; Y) = (1/p) sum_k h_mu(q^T y_k)` with the log-cosh surrogate
//! `h_mu(z) = mu log cosh(z / mu)`. Derivatives come in three flavours: the
//! Euclidean ones in the ambient space, the Riemannian ones on the tangent
//! space of the sphere, and the reparametrized objective `g(w) = f(q(w))` on
//! the hemisphere chart `q(w) = (w, sqrt(1 - |w|^2))`.
//!
//! Column sums are reduced chunk by chunk in a fixed order (see [`crate::par`]).

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SdctError};
use crate::model::DataMatrix;
use crate::par::{map_chunks, Execution, CHUNK_COLS};

const LN_2: f64 = std::f64::consts::LN_2;

/// Smoothing level of the surrogate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingParams {
    mu: f64,
}

impl SmoothingParams {
    pub fn new(mu: f64) -> Result<Self> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(SdctError::InvalidParameter(format!(
                "smoothing level mu must be positive and finite, got {mu}"
            )));
        }
        if mu > 1.0 {
            warn!("smoothing level mu = {mu} is above 1; the surrogate is far from |z|");
        }
        Ok(Self { mu })
    }

    pub fn mu(self) -> f64 {
        self.mu
    }
}

/// `log cosh(x)` without overflow.
#[inline]
pub fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - LN_2
}

/// `1 - tanh^2(x)` without cancellation for large |x|.
#[inline]
pub fn sech2(x: f64) -> f64 {
    let e = (-2.0 * x.abs()).exp();
    4.0 * e / ((1.0 + e) * (1.0 + e))
}

/// Value, first and second derivative of `h_mu` at `z`.
pub fn surrogate(z: f64, mu: SmoothingParams) -> Result<(f64, f64, f64)> {
    if !z.is_finite() {
        return Err(SdctError::InvalidInput(format!("surrogate argument {z}")));
    }
    let mu = mu.mu;
    let x = z / mu;
    Ok((mu * log_cosh(x), x.tanh(), sech2(x) / mu))
}

/// Unit vector in R^n.
#[derive(Debug, Clone, PartialEq)]
pub struct SpherePoint {
    q: DVector<f64>,
}

impl SpherePoint {
    /// Normalizes `v`; rejects zero or non-finite input.
    pub fn new(v: DVector<f64>) -> Result<Self> {
        let norm = v.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(SdctError::InvalidInput(format!(
                "cannot normalize vector with norm {norm}"
            )));
        }
        let mut q = v / norm;
        // A second pass brings | |q| - 1 | down to the last ulp.
        let n2 = q.norm();
        q /= n2;
        Ok(Self { q })
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(v))
    }

    /// Standard basis vector `e_i` (zero based).
    pub fn basis(n: usize, i: usize) -> Self {
        let mut q = DVector::zeros(n);
        q[i] = 1.0;
        Self { q }
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.q
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn neg(&self) -> Self {
        Self { q: -&self.q }
    }
}

/// Signed coordinate axis used as the "height" direction of a chart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Chart {
    /// Zero-based axis index.
    pub axis: usize,
    pub positive: bool,
}

impl Chart {
    /// The `e_n`, `q_n > 0` chart.
    pub fn canonical(n: usize) -> Self {
        Self {
            axis: n - 1,
            positive: true,
        }
    }

    fn sign(self) -> f64 {
        if self.positive {
            1.0
        } else {
            -1.0
        }
    }

    /// Reorders a vector of R^n into canonical chart coordinates.
    fn to_canonical(self, v: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = v
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != self.axis)
            .map(|(_, x)| *x)
            .collect();
        out.push(self.sign() * v[self.axis]);
        out
    }

    fn uncanonicalize(self, v: &[f64]) -> Vec<f64> {
        let n = v.len();
        let mut out = vec![0.0; n];
        let mut src = 0;
        for (i, slot) in out.iter_mut().enumerate() {
            if i == self.axis {
                *slot = self.sign() * v[n - 1];
            } else {
                *slot = v[src];
                src += 1;
            }
        }
        out
    }

    /// Rows of `x` permuted (and the axis row negated) so that this chart
    /// becomes the canonical one.
    pub fn canonical_data(self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let n = x.nrows();
        let mut order: Vec<usize> = (0..n).filter(|&i| i != self.axis).collect();
        order.push(self.axis);
        let mut out = x.select_rows(order.iter());
        if !self.positive {
            out.row_mut(n - 1).neg_mut();
        }
        out
    }
}

/// Point of the hemisphere chart: `w` in the open unit ball of R^{n-1}.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedPoint {
    pub w: DVector<f64>,
    pub chart: Chart,
}

impl ProjectedPoint {
    pub fn canonical(w: DVector<f64>) -> Self {
        let n = w.len() + 1;
        Self {
            w,
            chart: Chart::canonical(n),
        }
    }

    /// Ambient dimension `n` (one more than `w`).
    pub fn ambient_dim(&self) -> usize {
        self.w.len() + 1
    }
}

/// Radius of the set Gamma on which the chart analysis holds.
pub fn gamma_radius(n: usize) -> f64 {
    let n = n as f64;
    ((4.0 * n - 1.0) / (4.0 * n)).sqrt()
}

fn chart_height(w: &DVector<f64>) -> Result<f64> {
    let r2 = w.norm_squared();
    if !(r2 < 1.0) {
        return Err(SdctError::ChartViolation(format!(
            "|w| = {} is not inside the unit ball",
            r2.sqrt()
        )));
    }
    Ok((1.0 - r2).sqrt())
}

/// `q(w)`: places `sqrt(1 - |w|^2)` on the chart axis.
pub fn lift(w: &ProjectedPoint) -> Result<SpherePoint> {
    let qn = chart_height(&w.w)?;
    let mut canon: Vec<f64> = w.w.iter().copied().collect();
    canon.push(qn);
    Ok(SpherePoint {
        q: DVector::from_vec(w.chart.uncanonicalize(&canon)),
    })
}

/// Inverse of [`lift`] on the open hemisphere of `chart`.
pub fn project(q: &SpherePoint, chart: Chart) -> Result<ProjectedPoint> {
    if chart.axis >= q.dim() {
        return Err(SdctError::ChartViolation(format!(
            "chart axis {} outside dimension {}",
            chart.axis,
            q.dim()
        )));
    }
    let canon = chart.to_canonical(q.q.as_slice());
    let n = canon.len();
    if !(canon[n - 1] > 0.0) {
        return Err(SdctError::ChartViolation(format!(
            "q has height {} on chart axis {}",
            canon[n - 1],
            chart.axis
        )));
    }
    Ok(ProjectedPoint {
        w: DVector::from_column_slice(&canon[..n - 1]),
        chart,
    })
}

/// What to accumulate in a pass over the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Order {
    Value,
    Gradient,
    Hessian,
}

/// Euclidean value/gradient/Hessian of `f` at a point (not necessarily unit).
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub grad: Option<DVector<f64>>,
    pub hess: Option<DMatrix<f64>>,
}

struct Partial {
    value: f64,
    grad: Vec<f64>,
    // packed upper triangle, column by column
    hess: Vec<f64>,
}

fn check_data(q_len: usize, y: &DMatrix<f64>) -> Result<()> {
    if y.ncols() == 0 {
        return Err(SdctError::EmptyData);
    }
    if y.nrows() != q_len {
        return Err(SdctError::InvalidShape(format!(
            "point has dimension {q_len} but data has {} rows",
            y.nrows()
        )));
    }
    Ok(())
}

/// One pass over the columns of `y` accumulating the requested derivatives.
pub fn evaluate(
    y: &DMatrix<f64>,
    q: &[f64],
    mu: SmoothingParams,
    order: Order,
    exec: Execution,
) -> Result<Evaluation> {
    check_data(q.len(), y)?;
    let n = y.nrows();
    let p = y.ncols();
    let mu = mu.mu;
    let inv_mu = 1.0 / mu;
    let tri = n * (n + 1) / 2;
    let partials = map_chunks(y.as_slice(), n * CHUNK_COLS, exec, |_, block| {
        let mut part = Partial {
            value: 0.0,
            grad: if order >= Order::Gradient { vec![0.0; n] } else { Vec::new() },
            hess: if order >= Order::Hessian { vec![0.0; tri] } else { Vec::new() },
        };
        for col in block.chunks_exact(n) {
            let z: f64 = col.iter().zip(q).map(|(a, b)| a * b).sum();
            let x = z * inv_mu;
            part.value += mu * log_cosh(x);
            if order == Order::Value {
                continue;
            }
            let t = x.tanh();
            for (g, c) in part.grad.iter_mut().zip(col) {
                *g += t * c;
            }
            if order == Order::Hessian {
                let s = sech2(x) * inv_mu;
                let mut idx = 0;
                for j in 0..n {
                    let sj = s * col[j];
                    for i in 0..=j {
                        part.hess[idx] += sj * col[i];
                        idx += 1;
                    }
                }
            }
        }
        part
    });

    let mut value = 0.0;
    let mut grad = vec![0.0; if order >= Order::Gradient { n } else { 0 }];
    let mut packed = vec![0.0; if order >= Order::Hessian { tri } else { 0 }];
    for part in &partials {
        value += part.value;
        for (a, b) in grad.iter_mut().zip(&part.grad) {
            *a += b;
        }
        for (a, b) in packed.iter_mut().zip(&part.hess) {
            *a += b;
        }
    }
    let scale = 1.0 / p as f64;
    let grad = (order >= Order::Gradient).then(|| DVector::from_vec(grad) * scale);
    let hess = (order >= Order::Hessian).then(|| {
        let mut h = DMatrix::zeros(n, n);
        let mut idx = 0;
        for j in 0..n {
            for i in 0..=j {
                let v = packed[idx] * scale;
                h[(i, j)] = v;
                h[(j, i)] = v;
                idx += 1;
            }
        }
        h
    });
    Ok(Evaluation {
        value: value * scale,
        grad,
        hess,
    })
}

pub fn f_value(q: &SpherePoint, y: &DataMatrix, mu: SmoothingParams) -> Result<f64> {
    Ok(evaluate(&y.entries, q.q.as_slice(), mu, Order::Value, Execution::default())?.value)
}

pub fn f_value_grad(
    q: &SpherePoint,
    y: &DataMatrix,
    mu: SmoothingParams,
) -> Result<(f64, DVector<f64>)> {
    let e = evaluate(&y.entries, q.q.as_slice(), mu, Order::Gradient, Execution::default())?;
    Ok((e.value, e.grad.expect("gradient requested")))
}

pub fn f_hessian(q: &SpherePoint, y: &DataMatrix, mu: SmoothingParams) -> Result<DMatrix<f64>> {
    let e = evaluate(&y.entries, q.q.as_slice(), mu, Order::Hessian, Execution::default())?;
    Ok(e.hess.expect("hessian requested"))
}

/// `P = I - q q^T`.
pub fn tangent_projector(q: &DVector<f64>) -> DMatrix<f64> {
    let n = q.len();
    DMatrix::identity(n, n) - q * q.transpose()
}

/// Riemannian gradient and Hessian from Euclidean ones at `q`.
pub fn riemannian_from_euclidean(
    q: &DVector<f64>,
    grad: &DVector<f64>,
    hess: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let n = q.len();
    let proj = tangent_projector(q);
    let rgrad = &proj * grad;
    let shifted = hess - DMatrix::identity(n, n) * grad.dot(q);
    let mut rhess = &proj * shifted * &proj;
    // Symmetrize away rounding.
    let t = rhess.transpose();
    rhess = (rhess + t) * 0.5;
    (rgrad, rhess)
}

pub fn riemannian_grad_hess(
    q: &SpherePoint,
    y: &DataMatrix,
    mu: SmoothingParams,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let e = evaluate(&y.entries, q.q.as_slice(), mu, Order::Hessian, Execution::default())?;
    let (g, h) = (e.grad.unwrap(), e.hess.unwrap());
    Ok(riemannian_from_euclidean(&q.q, &g, &h))
}

/// Value, gradient and Hessian of `g(w) = f(q(w))` in chart coordinates.
#[derive(Debug, Clone)]
pub struct ChartEvaluation {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

pub fn g_value_grad_hess(
    w: &ProjectedPoint,
    x: &DataMatrix,
    mu: SmoothingParams,
) -> Result<ChartEvaluation> {
    let n = w.ambient_dim();
    check_data(n, &x.entries)?;
    if w.chart.axis >= n {
        return Err(SdctError::ChartViolation(format!(
            "chart axis {} outside dimension {n}",
            w.chart.axis
        )));
    }
    let qn = chart_height(&w.w)?;
    if w.w.norm() >= gamma_radius(n) {
        warn!("|w| = {} lies outside Gamma", w.w.norm());
    }
    let canonical;
    let data = if w.chart == Chart::canonical(n) {
        &x.entries
    } else {
        canonical = w.chart.canonical_data(&x.entries);
        &canonical
    };
    Ok(chart_derivatives(data, &w.w, qn, mu, Execution::default()))
}

fn chart_derivatives(
    x: &DMatrix<f64>,
    w: &DVector<f64>,
    qn: f64,
    mu: SmoothingParams,
    exec: Execution,
) -> ChartEvaluation {
    let n = x.nrows();
    let m = n - 1;
    let p = x.ncols();
    let mu = mu.mu;
    let inv_mu = 1.0 / mu;
    let w = w.as_slice();
    struct ChartPartial {
        value: f64,
        grad: Vec<f64>,
        hess: Vec<f64>,
        // sum_k x_n tanh(q^T x / mu)
        curvature: f64,
    }
    let partials = map_chunks(x.as_slice(), n * CHUNK_COLS, exec, |_, block| {
        let mut part = ChartPartial {
            value: 0.0,
            grad: vec![0.0; m],
            hess: vec![0.0; m * (m + 1) / 2],
            curvature: 0.0,
        };
        let mut v = vec![0.0; m];
        for col in block.chunks_exact(n) {
            let xn = col[n - 1];
            let z: f64 = col[..m].iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + qn * xn;
            let s = z * inv_mu;
            part.value += mu * log_cosh(s);
            let t = s.tanh();
            let ratio = xn / qn;
            for i in 0..m {
                v[i] = col[i] - ratio * w[i];
                part.grad[i] += t * v[i];
            }
            let c = sech2(s) * inv_mu;
            let mut idx = 0;
            for j in 0..m {
                let cj = c * v[j];
                for i in 0..=j {
                    part.hess[idx] += cj * v[i];
                    idx += 1;
                }
            }
            part.curvature += xn * t;
        }
        part
    });
    let mut value = 0.0;
    let mut grad = vec![0.0; m];
    let mut packed = vec![0.0; m * (m + 1) / 2];
    let mut curvature = 0.0;
    for part in &partials {
        value += part.value;
        curvature += part.curvature;
        for (a, b) in grad.iter_mut().zip(&part.grad) {
            *a += b;
        }
        for (a, b) in packed.iter_mut().zip(&part.hess) {
            *a += b;
        }
    }
    let scale = 1.0 / p as f64;
    let mut hess = DMatrix::zeros(m, m);
    let mut idx = 0;
    let qn3 = qn * qn * qn;
    for j in 0..m {
        for i in 0..=j {
            let mut h = packed[idx];
            let correction = if i == j { 1.0 / qn } else { 0.0 } + w[i] * w[j] / qn3;
            h -= curvature * correction;
            hess[(i, j)] = h * scale;
            hess[(j, i)] = h * scale;
            idx += 1;
        }
    }
    ChartEvaluation {
        value: value * scale,
        grad: DVector::from_vec(grad) * scale,
        hess,
    }
}

/// `g(w) = f(q(w))`, value only.
pub fn g_value(w: &ProjectedPoint, x: &DataMatrix, mu: SmoothingParams) -> Result<f64> {
    f_value(&lift(w)?, x, mu)
}

/// Jacobian of `w -> q(w)` for the canonical chart, an n x (n-1) matrix.
pub fn chart_jacobian(w: &DVector<f64>) -> Result<DMatrix<f64>> {
    let qn = chart_height(w)?;
    let m = w.len();
    let mut j = DMatrix::zeros(m + 1, m);
    for i in 0..m {
        j[(i, i)] = 1.0;
        j[(m, i)] = -w[i] / qn;
    }
    Ok(j)
}

/// `g` derivatives through the chain rule from Euclidean derivatives of `f`
/// (canonical chart only). Used to cross-check [`g_value_grad_hess`].
pub fn g_by_chain_rule(
    w: &DVector<f64>,
    x: &DataMatrix,
    mu: SmoothingParams,
) -> Result<ChartEvaluation> {
    let qn = chart_height(w)?;
    let mut q: Vec<f64> = w.iter().copied().collect();
    q.push(qn);
    let e = evaluate(&x.entries, &q, mu, Order::Hessian, Execution::default())?;
    let (grad, hess) = (e.grad.unwrap(), e.hess.unwrap());
    let jac = chart_jacobian(w)?;
    let m = w.len();
    // Second derivative of q_n(w): -(I/q_n + w w^T / q_n^3).
    let qn3 = qn * qn * qn;
    let d2qn = -(DMatrix::identity(m, m) / qn + w * w.transpose() / qn3);
    let g_grad = jac.transpose() * &grad;
    let g_hess = jac.transpose() * &hess * &jac + d2qn * grad[m];
    Ok(ChartEvaluation {
        value: e.value,
        grad: g_grad,
        hess: g_hess,
    })
}
