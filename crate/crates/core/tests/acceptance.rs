//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails. Pass criterion ids (`c1` .. `c10`)
//! as arguments to run a subset.

use std::f64::consts::SQRT_2;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use sdct_core::geometry::{minimizer_census, region_certificates, sample_region, Region, RegionSpec};
use sdct_core::harness::{run_phase_transition, BenchConfig};
use sdct_core::model::{
    identity_dictionary, make_complete_dictionary, make_orthogonal_dictionary, sample_bg, synthesize,
};
use sdct_core::objective::{evaluate, g_value_grad_hess, Order, ProjectedPoint, SmoothingParams};
use sdct_core::recovery::{
    adm_trials, lp_round_certified, preconditioning_perturbation, random_sphere_point, run_pipeline,
    support_of, PipelineConfig, RoundingProblem, ThetaSource,
};
use sdct_core::rng::{derive_seed, rng_from_seed, SeededRng};
use sdct_core::trm::{kkt_residual, minimize_with, solve_subproblem, TrSubproblem};
use sdct_core::{DataMatrix, Execution, TrmConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn gaussian_vec(rng: &mut SeededRng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// `|a - b| / max(|b|, floor)`. The floor is a millionth of the derivative's
/// natural scale: where every column sits deep in the flat part of tanh the
/// exact derivative is exponentially small and below what central
/// differences resolve in double precision.
fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>, floor: f64) -> f64 {
    (a - b).norm() / b.norm().max(floor)
}

fn as_mat(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

fn c1_derivatives() -> Outcome {
    let mut worst: f64 = 0.0;
    for inst in 0..100u64 {
        let mut rng = rng_from_seed(derive_seed(1, &[inst]));
        let n = rng.random_range(2..=20usize);
        let p = rng.random_range(1..=500usize);
        let mu_v = if inst % 2 == 0 { 0.1 } else { 0.01 };
        let mu = SmoothingParams::new(mu_v).unwrap();
        let a0 = make_orthogonal_dictionary(n, derive_seed(1, &[inst, 1])).unwrap();
        let x0 = sample_bg(n, p, 0.3, derive_seed(1, &[inst, 2])).unwrap();
        let y = synthesize(&a0, &x0).unwrap();
        let h = 1e-4 * mu_v;
        let mean_sq = y.entries.norm_squared() / p as f64;
        let (gfloor, hfloor) = (1e-6 * mean_sq.sqrt(), 1e-6 * mean_sq / mu_v);

        let q = gaussian_vec(&mut rng, n).normalize();
        let eval = |v: &DVector<f64>| evaluate(&y.entries, v.as_slice(), mu, Order::Hessian, Execution::Sequential).unwrap();
        let e = eval(&q);
        let (grad, hess) = (e.grad.unwrap(), e.hess.unwrap());
        let mut fd_grad = DVector::zeros(n);
        let mut fd_hess = DMatrix::zeros(n, n);
        for i in 0..n {
            let mut qp = q.clone();
            qp[i] += h;
            let mut qm = q.clone();
            qm[i] -= h;
            let (ep, em) = (eval(&qp), eval(&qm));
            fd_grad[i] = (ep.value - em.value) / (2.0 * h);
            fd_hess.set_column(i, &((ep.grad.unwrap() - em.grad.unwrap()) / (2.0 * h)));
        }
        worst = worst.max(rel(&as_mat(&fd_grad), &as_mat(&grad), gfloor));
        worst = worst.max(rel(&fd_hess, &hess, hfloor));

        // Chart derivatives at a point of Gamma.
        let m = n - 1;
        let mut w = gaussian_vec(&mut rng, m);
        let radius = 0.8 * rng.random::<f64>();
        w *= radius / w.norm();
        let at = |v: &DVector<f64>| g_value_grad_hess(&ProjectedPoint::canonical(v.clone()), &y, mu).unwrap();
        let c = at(&w);
        let mut fd_g = DVector::zeros(m);
        let mut fd_h = DMatrix::zeros(m, m);
        for i in 0..m {
            let mut wp = w.clone();
            wp[i] += h;
            let mut wm = w.clone();
            wm[i] -= h;
            let (cp, cm) = (at(&wp), at(&wm));
            fd_g[i] = (cp.value - cm.value) / (2.0 * h);
            fd_h.set_column(i, &((cp.grad - cm.grad) / (2.0 * h)));
        }
        worst = worst.max(rel(&as_mat(&fd_g), &as_mat(&c.grad), gfloor));
        worst = worst.max(rel(&fd_h, &c.hess, hfloor));
    }
    Outcome {
        pass: worst <= 1e-5,
        detail: format!("worst relative error {worst:.2e} over 100 instances (tol 1e-5)"),
    }
}

/// Brute-force trust-region oracle: interior Newton point plus the best of
/// 1e5 boundary points, each polished by projected gradient on the sphere.
fn tr_oracle(b: &DMatrix<f64>, g: &DVector<f64>, delta: f64, rng: &mut SeededRng) -> f64 {
    let d = g.len();
    let model = |x: &DVector<f64>| g.dot(x) + 0.5 * x.dot(&(b * x));
    let mut best = f64::INFINITY;
    let eig = SymmetricEigen::new(b.clone());
    if eig.eigenvalues.min() > 0.0 {
        if let Some(x) = b.clone().cholesky().map(|c| c.solve(&(-g))) {
            if x.norm() <= delta {
                best = best.min(model(&x));
            }
        }
    }
    let mut pts: Vec<(f64, DVector<f64>)> = (0..100_000)
        .map(|_| {
            let v = gaussian_vec(rng, d);
            let x = &v * (delta / v.norm());
            (model(&x), x)
        })
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let lip = eig.eigenvalues.amax() + g.norm() / delta + 1e-12;
    for (_, mut x) in pts.into_iter().take(8) {
        for _ in 0..20_000 {
            let grad = b * &x + g;
            let y = &x - grad / lip;
            x = &y * (delta / y.norm());
        }
        best = best.min(model(&x));
    }
    best
}

fn random_tr_problem(rng: &mut SeededRng, case: usize) -> (DMatrix<f64>, DVector<f64>, f64) {
    let d = 1 + case % 6;
    let q = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal)).qr().q();
    let mut lam: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal) * 2.0).collect();
    lam.sort_by(f64::total_cmp);
    let delta = 0.1 + 2.0 * rng.random::<f64>();
    let mut g = &q * gaussian_vec(rng, d);
    match case % 4 {
        // Forced hard case: g orthogonal to the bottom eigenvector, small enough
        // that the shifted solve stays inside the ball.
        0 => {
            lam[0] = -lam[0].abs() - 0.5;
            let mut coeff = q.transpose() * &g;
            coeff[0] = 0.0;
            let mut partial: f64 = 0.0;
            for i in 1..d {
                partial += (coeff[i] / (lam[i] - lam[0])).powi(2);
            }
            if partial > 0.0 {
                coeff *= 0.5 * delta / partial.sqrt();
            }
            g = &q * coeff;
        }
        // Positive definite with a small gradient: interior solution.
        1 => {
            for l in lam.iter_mut() {
                *l = l.abs() + 0.5;
            }
            g *= 0.05 * delta;
        }
        _ => {}
    }
    let b = &q * DMatrix::from_diagonal(&DVector::from_vec(lam)) * q.transpose();
    let b = (&b + b.transpose()) * 0.5;
    (b, g, delta)
}

fn c2_subproblem() -> Outcome {
    let mut worst_gap: f64 = 0.0;
    let mut worst_kkt: f64 = 0.0;
    let mut hard = 0;
    for case in 0..200usize {
        let mut rng = rng_from_seed(derive_seed(2, &[case as u64]));
        let (b, g, delta) = random_tr_problem(&mut rng, case);
        if case % 4 == 0 {
            hard += 1;
        }
        let sp = TrSubproblem::new(b.clone(), g.clone(), delta).unwrap();
        let sol = solve_subproblem(&sp).unwrap();
        let val = sp.model(&sol.xi);
        let oracle = tr_oracle(&b, &g, delta, &mut rng);
        worst_gap = worst_gap.max((val - oracle).abs());
        worst_kkt = worst_kkt.max(kkt_residual(&sp, &sol));
    }
    Outcome {
        pass: worst_gap <= 1e-6 && worst_kkt <= 1e-8,
        detail: format!(
            "200 problems ({hard} forced hard): max |m - oracle| = {worst_gap:.2e} (tol 1e-6), max KKT = {worst_kkt:.2e} (tol 1e-8)"
        ),
    }
}

fn c3_algorithm_contract() -> Outcome {
    let mut ok_decrease = true;
    let mut worst_norm: f64 = 0.0;
    let mut reproducible = true;
    let pools: Vec<rayon::ThreadPool> = [1usize, 4]
        .iter()
        .map(|&t| rayon::ThreadPoolBuilder::new().num_threads(t).build().unwrap())
        .collect();
    for inst in 0..6u64 {
        let n = 4 + 2 * inst as usize;
        let a0 = make_orthogonal_dictionary(n, derive_seed(3, &[inst])).unwrap();
        let x0 = sample_bg(n, 3000, 0.2, derive_seed(3, &[inst, 1])).unwrap();
        let y = synthesize(&a0, &x0).unwrap();
        let mu = SmoothingParams::new(0.01).unwrap();
        let q0 = random_sphere_point(n, derive_seed(3, &[inst, 2]));
        let cfg = TrmConfig::default();
        let base = minimize_with(&y, mu, &cfg, &q0, Execution::Sequential).unwrap();
        let accepted: Vec<f64> = std::iter::once(base.f_initial).chain(base.accepted_values()).collect();
        ok_decrease &= accepted.windows(2).all(|w| w[1] < w[0]);
        for r in &base.iterates {
            worst_norm = worst_norm.max((r.point.norm() - 1.0).abs());
        }
        worst_norm = worst_norm.max((base.q_final.as_vector().norm() - 1.0).abs());
        for pool in &pools {
            let other = pool.install(|| minimize_with(&y, mu, &cfg, &q0, Execution::Parallel).unwrap());
            reproducible &= other == base;
        }
    }
    Outcome {
        pass: ok_decrease && worst_norm <= 1e-12 && reproducible,
        detail: format!(
            "strict decrease {ok_decrease}, max | |q| - 1 | = {worst_norm:.1e} (tol 1e-12), traces identical across 1/4 workers and sequential {reproducible}"
        ),
    }
}

fn c4_phase_transition() -> Outcome {
    let cell = |n: usize, k: usize| {
        let cfg = BenchConfig {
            n_values: vec![n],
            k_values: Some(vec![k]),
            master_seed: 2024,
            ..BenchConfig::default()
        };
        run_phase_transition(&cfg).unwrap().remove(0)
    };
    let a = cell(10, 1);
    let b = cell(20, 5);
    let c = cell(10, 10);
    let well_formed = c.trials == 5 && c.successes <= c.trials && c.mean_re >= 0.0;
    Outcome {
        pass: a.successes == 5 && b.successes >= 4 && well_formed,
        detail: format!(
            "n=10,k=1: {}/5 (need 5); n=20,k=5: {}/5 (need >=4); n=10,k=10: {}/5 (reported)",
            a.successes, b.successes, c.successes
        ),
    }
}

fn c5_geometry() -> Outcome {
    let mu = SmoothingParams::new(0.01).unwrap();
    let x0 = sample_bg(5, 100_000, 0.2, 51).unwrap();
    let x = synthesize(&identity_dictionary(5), &x0).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, region) in Region::ALL.into_iter().enumerate() {
        let spec = RegionSpec::new(region, 5, 0.01).unwrap();
        let pts = sample_region(5, &spec, 1000, derive_seed(52, &[i as u64])).unwrap();
        let rep = region_certificates(&x, mu, 0.2, &spec, &pts).unwrap();
        pass &= rep.pass_fraction >= 0.99;
        parts.push(format!(
            "{}: {:.3} (min margin {:.3e}, median {:.3e})",
            region.name(),
            rep.pass_fraction,
            rep.margin_min,
            rep.margin_median
        ));
    }
    Outcome {
        pass,
        detail: format!("pass fractions (need >= 0.99) {}", parts.join("; ")),
    }
}

fn c6_census() -> Outcome {
    let mu_v = 0.01;
    let mu = SmoothingParams::new(mu_v).unwrap();
    let x0 = sample_bg(3, 100_000, 0.2, 61).unwrap();
    let x = synthesize(&identity_dictionary(3), &x0).unwrap();
    let rep = minimizer_census(&x, mu, &TrmConfig::default(), 200, 2.0 * mu_v, 62).unwrap();
    let near = rep.clusters.iter().all(|c| c.basis_distance <= SQRT_2 * mu_v && c.diameter <= 2.0 * mu_v);
    let worst = rep.clusters.iter().map(|c| c.basis_distance).fold(0.0, f64::max);
    let sizes: Vec<usize> = rep.clusters.iter().map(|c| c.members).collect();
    Outcome {
        pass: rep.clusters.len() == 6 && near,
        detail: format!(
            "{} clusters (need 6) with sizes {sizes:?}; farthest member from a signed basis vector {worst:.2e} (tol {:.2e})",
            rep.clusters.len(),
            SQRT_2 * mu_v
        ),
    }
}

/// Minimum of `|Y^T q|_1` over `<r, q> = 1` by enumerating the vertices where
/// `n - 1` columns of `Y` are orthogonal to `q`.
fn vertex_oracle(y: &DMatrix<f64>, r: &DVector<f64>) -> (f64, DVector<f64>) {
    let (n, p) = y.shape();
    let mut best = (f64::INFINITY, DVector::zeros(n));
    let mut subset: Vec<usize> = (0..n - 1).collect();
    loop {
        let mut m = DMatrix::zeros(n, n);
        for (row, &k) in subset.iter().enumerate() {
            m.set_row(row, &y.column(k).transpose());
        }
        m.set_row(n - 1, &r.transpose());
        let mut rhs = DVector::zeros(n);
        rhs[n - 1] = 1.0;
        if let Some(q) = m.lu().solve(&rhs) {
            if q.iter().all(|v| v.is_finite()) {
                let obj: f64 = (y.transpose() * &q).iter().map(|v| v.abs()).sum();
                if obj < best.0 {
                    best = (obj, q);
                }
            }
        }
        // Next (n-1)-subset of 0..p in lexicographic order.
        let k = n - 1;
        let mut i = k;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if subset[i] < p - k + i {
                subset[i] += 1;
                for j in i + 1..k {
                    subset[j] = subset[j - 1] + 1;
                }
                break;
            }
        }
    }
}

fn c7_rounding() -> Outcome {
    let mut exact = 0;
    for trial in 0..20u64 {
        let a0 = make_orthogonal_dictionary(10, derive_seed(7, &[trial, 0])).unwrap();
        let x0 = sample_bg(10, 5000, 0.15, derive_seed(7, &[trial, 1])).unwrap();
        let y = synthesize(&a0, &x0).unwrap();
        let i = (trial % 10) as usize;
        let target = a0.entries.column(i).clone_owned();
        let mut rng = rng_from_seed(derive_seed(7, &[trial, 2]));
        let mut u = gaussian_vec(&mut rng, 10);
        u -= &target * target.dot(&u);
        u.normalize_mut();
        let c = 0.996f64;
        let r = &target * c + u * (1.0 - c * c).sqrt();
        let sol = lp_round_certified(&RoundingProblem { yhat: &y, r }).unwrap();
        let row = y.entries.transpose() * sol.q.as_vector();
        if support_of(row.as_slice()).iter().zip(x0.support.row(i).iter()).all(|(a, b)| a == b) {
            exact += 1;
        }
    }
    let mut oracle_ok = 0;
    let mut oracle_total = 0;
    for inst in 0..60u64 {
        let mut rng = rng_from_seed(derive_seed(71, &[inst]));
        let n = rng.random_range(2..=4usize);
        let p = rng.random_range(n..=12 - n);
        let y = DataMatrix::new(DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal)));
        let r = gaussian_vec(&mut rng, n).normalize();
        let sol = lp_round_certified(&RoundingProblem { yhat: &y, r: r.clone() }).unwrap();
        let (obj, q) = vertex_oracle(&y.entries, &r);
        oracle_total += 1;
        if (sol.objective - obj).abs() <= 1e-9 * obj.max(1.0) && (&sol.q_raw - &q).amax() <= 1e-8 * q.amax().max(1.0) {
            oracle_ok += 1;
        }
    }
    Outcome {
        pass: exact >= 19 && oracle_ok == oracle_total,
        detail: format!(
            "support-exact rounding in {exact}/20 (need >= 19); vertex oracle agreement {oracle_ok}/{oracle_total} (need all)"
        ),
    }
}

fn c8_pipeline() -> Outcome {
    let run = |kappa: f64, seed: u64| {
        let cfg = PipelineConfig {
            n: 10,
            p: 5000,
            theta: 0.15,
            kappa,
            mu: 0.01,
            seed,
            trm: TrmConfig::default(),
            theta_source: ThetaSource::Known,
        };
        run_pipeline(&cfg).map(|r| r.exact(1e-8)).unwrap_or(false)
    };
    let orth = (0..5u64).filter(|&s| run(1.0, 800 + s)).count();
    let complete = (0..5u64).filter(|&s| run(1.2, 810 + s)).count();
    Outcome {
        pass: orth >= 4 && complete >= 3,
        detail: format!("orthogonal exact {orth}/5 (need >= 4); complete kappa=1.2 exact {complete}/5 (need >= 3)"),
    }
}

fn c9_preconditioning() -> Outcome {
    let ps = [1_000usize, 10_000, 100_000];
    let mut pts = Vec::new();
    for &p in &ps {
        let mut acc = 0.0;
        for s in 0..5u64 {
            let a0 = make_complete_dictionary(10, 5.0, derive_seed(9, &[s])).unwrap();
            let x0 = sample_bg(10, p, 0.2, derive_seed(9, &[s, p as u64])).unwrap();
            acc += preconditioning_perturbation(&a0, &x0.entries, 0.2).unwrap();
        }
        pts.push(((p as f64).ln(), (acc / 5.0).ln()));
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / 3.0;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / 3.0;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    Outcome {
        pass: (-0.65..=-0.35).contains(&slope),
        detail: format!("log-log slope {slope:.3} (need within [-0.65, -0.35])"),
    }
}

fn c10_adm() -> Outcome {
    let a = make_orthogonal_dictionary(8, 101).unwrap();
    let x = sample_bg(8, 2000, 0.2, 102).unwrap();
    let y = synthesize(&a, &x).unwrap();
    let s = adm_trials(&y, 0.3, 100, 100, 103).unwrap();
    Outcome {
        pass: s.relative_spread <= 1e-2 && s.max_orthogonality_residual <= 1e-10 && s.monotone,
        detail: format!(
            "relative spread {:.2e} (tol 1e-2), orthogonality residual {:.2e} (tol 1e-10), monotone {}",
            s.relative_spread, s.max_orthogonality_residual, s.monotone
        ),
    }
}

fn main() {
    type Check = fn() -> Outcome;
    let criteria: [(&str, &str, u64, Check); 10] = [
        ("c1", "derivatives vs central differences", 60, c1_derivatives),
        ("c2", "trust-region subproblem vs brute force", 120, c2_subproblem),
        ("c3", "trust-region iteration contract", 60, c3_algorithm_contract),
        ("c4", "phase transition spot cells", 600, c4_phase_transition),
        ("c5", "three-region certificates", 300, c5_geometry),
        ("c6", "minimizer census", 300, c6_census),
        ("c7", "LP rounding exactness", 180, c7_rounding),
        ("c8", "end-to-end recovery", 600, c8_pipeline),
        ("c9", "preconditioning perturbation rate", 180, c9_preconditioning),
        ("c10", "ADM baseline", 180, c10_adm),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, name, budget, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| f == id) {
            continue;
        }
        let start = Instant::now();
        let out = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(budget);
        let pass = out.pass && in_time;
        if !pass {
            failed += 1;
        }
        println!(
            "{} {id:>3} {name}: {} [{:.1}s of {budget}s]",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
