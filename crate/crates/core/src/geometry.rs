//! Empirical landscape laboratory on the hemisphere chart.
//!
//! Samples chart points from the three radial regions, evaluates the sign
//! certificates of each region (positive curvature near the origin, outward
//! gradient in the middle band, negative radial curvature further out) and
//! reports pass fractions with margin statistics. Also produces `n = 3`
//! landscape grids and the census of local minimizers.

use std::f64::consts::SQRT_2;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SdctError};
use crate::model::{identity_dictionary, sample_bg, synthesize, DataMatrix};
use crate::objective::{
    g_value, g_value_grad_hess, gamma_radius, ChartEvaluation, ProjectedPoint, SmoothingParams,
};
use crate::par::{map_indices, Execution};
use crate::recovery::pipeline::{random_sphere_point, reconstruction_error_index};
use crate::rng::{derive_seed, rng_from_seed};
use crate::trm::{minimize_with, Termination, TrmConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    R1,
    R2,
    R3,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::R1, Region::R2, Region::R3];

    pub fn name(self) -> &'static str {
        match self {
            Region::R1 => "r1",
            Region::R2 => "r2",
            Region::R3 => "r3",
        }
    }
}

impl std::str::FromStr for Region {
    type Err = SdctError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "r1" => Ok(Region::R1),
            "r2" => Ok(Region::R2),
            "r3" => Ok(Region::R3),
            other => Err(SdctError::InvalidParameter(format!("unknown region {other:?}"))),
        }
    }
}

/// Radii of the three annuli in `w`-space.
pub fn region_radii(n: usize, mu: f64) -> [f64; 4] {
    [
        0.0,
        mu / (4.0 * SQRT_2),
        1.0 / (20.0 * 5f64.sqrt()),
        gamma_radius(n),
    ]
}

/// Largest smoothing level for which the radii are strictly ordered.
pub fn max_mu() -> f64 {
    (2.0f64 / 125.0).sqrt()
}

/// A radial annulus `inner <= |w| <= outer` of the chart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegionSpec {
    pub region: Region,
    pub n: usize,
    pub mu: f64,
    pub inner: f64,
    pub outer: f64,
}

impl RegionSpec {
    pub fn new(region: Region, n: usize, mu: f64) -> Result<Self> {
        if n < 2 {
            return Err(SdctError::InvalidDimension(format!("need n >= 2, got {n}")));
        }
        if !(mu > 0.0 && mu < max_mu()) {
            return Err(SdctError::InvalidRegion(format!(
                "mu = {mu} leaves the annuli unordered (need 0 < mu < {:.6})",
                max_mu()
            )));
        }
        let radii = region_radii(n, mu);
        if !(radii[1] < radii[2] && radii[2] < radii[3]) {
            return Err(SdctError::InvalidRegion(format!("radii {radii:?} are not ordered")));
        }
        let i = match region {
            Region::R1 => 0,
            Region::R2 => 1,
            Region::R3 => 2,
        };
        Ok(Self {
            region,
            n,
            mu,
            inner: radii[i],
            outer: radii[i + 1],
        })
    }

    pub fn contains(&self, w: &DVector<f64>) -> bool {
        let r = w.norm();
        r >= self.inner * (1.0 - 1e-12) && r <= self.outer * (1.0 + 1e-12)
    }
}

/// Uniform samples from the annulus: a uniform direction on the unit sphere of
/// R^{n-1} and a radius with CDF proportional to `r^{n-1} - inner^{n-1}`.
pub fn sample_region(n: usize, spec: &RegionSpec, count: usize, seed: u64) -> Result<Vec<ProjectedPoint>> {
    if n != spec.n {
        return Err(SdctError::InvalidDimension(format!(
            "spec built for n = {} but sampling n = {n}",
            spec.n
        )));
    }
    if !(spec.outer > spec.inner) {
        return Err(SdctError::InvalidRegion("empty annulus".into()));
    }
    let d = (n - 1) as i32;
    let lo = spec.inner.powi(d);
    let hi = spec.outer.powi(d);
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let dir = DVector::from_fn(n - 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = dir.norm();
        if norm == 0.0 {
            continue;
        }
        let u: f64 = rng.random();
        let r = (lo + u * (hi - lo)).powf(1.0 / d as f64).clamp(spec.inner, spec.outer);
        out.push(ProjectedPoint::canonical(dir * (r / norm)));
    }
    Ok(out)
}

/// Normalized certificate of `region` at `w`; positive means the sign
/// condition holds.
pub fn certificate(region: Region, w: &DVector<f64>, eval: &ChartEvaluation, mu: f64, theta: f64) -> f64 {
    match region {
        Region::R1 => {
            let eig = SymmetricEigen::new(eval.hess.clone());
            eig.eigenvalues.min() * mu / theta
        }
        Region::R2 => w.dot(&eval.grad) / w.norm() / theta,
        Region::R3 => -(w.dot(&(&eval.hess * w)) / w.norm_squared()) / theta,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleCertificate {
    pub region: Region,
    pub sample_idx: usize,
    pub norm_w: f64,
    pub certificate: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionReport {
    pub region: Region,
    pub samples: usize,
    pub pass_fraction: f64,
    pub margin_min: f64,
    pub margin_median: f64,
    pub details: Vec<SampleCertificate>,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Evaluates the region's sign certificate at every sample.
pub fn region_certificates(
    x: &DataMatrix,
    mu: SmoothingParams,
    theta: f64,
    spec: &RegionSpec,
    samples: &[ProjectedPoint],
) -> Result<RegionReport> {
    region_certificates_with(x, mu, theta, spec, samples, Execution::default())
}

pub fn region_certificates_with(
    x: &DataMatrix,
    mu: SmoothingParams,
    theta: f64,
    spec: &RegionSpec,
    samples: &[ProjectedPoint],
    exec: Execution,
) -> Result<RegionReport> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(SdctError::InvalidParameter(format!("theta = {theta} outside (0, 1]")));
    }
    let evaluated = map_indices(samples.len(), exec, |i| -> Result<SampleCertificate> {
        let s = &samples[i];
        if !spec.contains(&s.w) {
            return Err(SdctError::ChartViolation(format!(
                "sample {i} with |w| = {} lies outside {:?}",
                s.w.norm(),
                spec.region
            )));
        }
        let eval = g_value_grad_hess(s, x, mu)?;
        let c = certificate(spec.region, &s.w, &eval, mu.mu(), theta);
        Ok(SampleCertificate {
            region: spec.region,
            sample_idx: i,
            norm_w: s.w.norm(),
            certificate: c,
            pass: c > 0.0,
        })
    });
    let details = evaluated.into_iter().collect::<Result<Vec<_>>>()?;
    let passed = details.iter().filter(|d| d.pass).count();
    let margins: Vec<f64> = details.iter().map(|d| d.certificate).collect();
    Ok(RegionReport {
        region: spec.region,
        samples: details.len(),
        pass_fraction: if details.is_empty() { 0.0 } else { passed as f64 / details.len() as f64 },
        margin_min: margins.iter().copied().fold(f64::INFINITY, f64::min),
        margin_median: median(margins),
        details,
    })
}

/// Where landscape values come from.
#[derive(Debug, Clone)]
pub enum GridSource<'a> {
    /// Finite-sample objective of the given data.
    Data(&'a DataMatrix),
    /// Large-sample average over fresh BG data with `A0 = I`.
    Expectation { theta: f64, p: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub w1: f64,
    pub w2: f64,
    pub g: f64,
}

/// Radius of the disk covered by landscape grids.
pub fn grid_radius() -> f64 {
    (11.0f64 / 12.0).sqrt()
}

/// `g(w)` on a `resolution x resolution` regular grid over the square
/// enclosing the disk `|w| <= sqrt(11/12)`; points outside the disk get NaN.
/// Rows are ordered with `w1` varying slowest.
pub fn landscape_grid(
    n: usize,
    source: GridSource<'_>,
    mu: SmoothingParams,
    resolution: usize,
    seed: u64,
) -> Result<Vec<GridRow>> {
    if n != 3 {
        return Err(SdctError::UnsupportedDimension(format!(
            "landscape grids need n = 3, got {n}"
        )));
    }
    if resolution < 16 {
        return Err(SdctError::InvalidParameter(format!(
            "resolution must be at least 16, got {resolution}"
        )));
    }
    let owned;
    let data = match source {
        GridSource::Data(x) => {
            if x.dim() != 3 {
                return Err(SdctError::UnsupportedDimension(format!(
                    "landscape grids need n = 3 data, got {}",
                    x.dim()
                )));
            }
            x
        }
        GridSource::Expectation { theta, p } => {
            let x0 = sample_bg(3, p, theta, seed)?;
            owned = synthesize(&identity_dictionary(3), &x0)?;
            &owned
        }
    };
    let radius = grid_radius();
    let step = 2.0 * radius / (resolution - 1) as f64;
    let coord = |i: usize| -radius + step * i as f64;
    let rows = map_indices(resolution * resolution, Execution::default(), |idx| {
        let (w1, w2) = (coord(idx / resolution), coord(idx % resolution));
        let w = DVector::from_vec(vec![w1, w2]);
        let g = if w.norm() <= radius {
            g_value(&ProjectedPoint::canonical(w), data, mu)
        } else {
            Ok(f64::NAN)
        };
        g.map(|g| GridRow { w1, w2, g })
    });
    rows.into_iter().collect()
}

/// Cluster of final iterates in a minimizer census.
#[derive(Debug, Clone, Serialize)]
pub struct Cluster {
    /// Mean of the members, normalized.
    pub center: Vec<f64>,
    pub members: usize,
    /// Largest pairwise distance inside the cluster.
    pub diameter: f64,
    /// Distance from the farthest member to the nearest signed basis vector.
    pub basis_distance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CensusReport {
    pub starts: usize,
    pub clusters: Vec<Cluster>,
    pub terminations: Vec<Termination>,
}

/// Runs `starts` independent minimizations from uniform random points and
/// groups the final iterates by single linkage at distance `link`.
pub fn minimizer_census(
    x: &DataMatrix,
    mu: SmoothingParams,
    cfg: &TrmConfig,
    starts: usize,
    link: f64,
    seed: u64,
) -> Result<CensusReport> {
    let n = x.dim();
    let runs = map_indices(starts, Execution::default(), |i| {
        let q0 = random_sphere_point(n, derive_seed(seed, &[i as u64]));
        minimize_with(x, mu, cfg, &q0, Execution::Sequential)
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let finals: Vec<DVector<f64>> = runs.iter().map(|r| r.q_final.as_vector().clone()).collect();
    let terminations = runs.iter().map(|r| r.termination).collect();

    // Single-linkage components via union-find.
    let mut parent: Vec<usize> = (0..finals.len()).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..finals.len() {
        for j in 0..i {
            if (&finals[i] - &finals[j]).norm() <= link {
                let (a, b) = (root(&mut parent, i), root(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for i in 0..finals.len() {
        let r = root(&mut parent, i);
        match groups.iter_mut().find(|(k, _)| *k == r) {
            Some((_, g)) => g.push(i),
            None => groups.push((r, vec![i])),
        }
    }
    let clusters = groups
        .into_iter()
        .map(|(_, idx)| {
            let mut mean = DVector::zeros(n);
            for &i in &idx {
                mean += &finals[i];
            }
            let mut diameter: f64 = 0.0;
            for (a, &i) in idx.iter().enumerate() {
                for &j in &idx[..a] {
                    diameter = diameter.max((&finals[i] - &finals[j]).norm());
                }
            }
            let basis_distance = idx
                .iter()
                .map(|&i| reconstruction_error_index(&finals[i]).0)
                .fold(0.0, f64::max);
            Cluster {
                center: mean.normalize().iter().copied().collect(),
                members: idx.len(),
                diameter,
                basis_distance,
            }
        })
        .collect();
    Ok(CensusReport {
        starts,
        clusters,
        terminations,
    })
}

/// `lambda_min` of the chart Hessian at `w = 0`.
pub fn origin_min_eigenvalue(x: &DataMatrix, mu: SmoothingParams) -> Result<f64> {
    let w = ProjectedPoint::canonical(DVector::zeros(x.dim() - 1));
    let eval = g_value_grad_hess(&w, x, mu)?;
    Ok(SymmetricEigen::new(eval.hess).eigenvalues.min())
}

/// Column permutation helper used in invariance checks.
pub fn permute_columns(x: &DataMatrix, perm: &[usize]) -> DataMatrix {
    let cols: Vec<DVector<f64>> = perm.iter().map(|&j| x.entries.column(j).clone_owned()).collect();
    DataMatrix::new(DMatrix::from_columns(&cols))
}
