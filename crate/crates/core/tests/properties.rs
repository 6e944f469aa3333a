//! Property tests for the invariants of the objective, the trust-region
//! machinery, rounding, matching, whitening and the file formats.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;

use sdct_core::harness::{read_phase_csv, write_phase_csv, PhaseRow};
use sdct_core::io::{read_matrix, write_matrix};
use sdct_core::model::{make_orthogonal_dictionary, sample_bg, synthesize};
use sdct_core::objective::{riemannian_grad_hess, surrogate, SmoothingParams, SpherePoint};
use sdct_core::recovery::{
    adm_orthogonal, lp_round_certified, match_error, precondition, recover_first_rows, RoundingProblem,
};
use sdct_core::rng::derive_seed;
use sdct_core::trm::{kkt_residual, retract, solve_subproblem, tangent_basis, TrSubproblem};
use sdct_core::{DataMatrix, TrmConfig};

fn matrix(n: usize, m: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-3.0f64..3.0, n * m).prop_map(move |v| DMatrix::from_vec(n, m, v))
}

fn unit(n: usize) -> impl Strategy<Value = SpherePoint> {
    prop::collection::vec(-1.0f64..1.0, n)
        .prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6)
        .prop_map(|v| SpherePoint::from_slice(&v).unwrap())
}

fn data(n: usize, p: usize) -> impl Strategy<Value = DataMatrix> {
    matrix(n, p).prop_map(DataMatrix::new)
}

/// Brute-force minimum of `|Y^T q|_1` over `<r, q> = 1` across the vertices.
fn vertex_minimum(y: &DMatrix<f64>, r: &DVector<f64>) -> f64 {
    let (n, p) = y.shape();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << p) {
        if mask.count_ones() as usize != n - 1 {
            continue;
        }
        let mut m = DMatrix::zeros(n, n);
        let mut row = 0;
        for k in 0..p {
            if mask & (1 << k) != 0 {
                m.set_row(row, &y.column(k).transpose());
                row += 1;
            }
        }
        m.set_row(n - 1, &r.transpose());
        let mut rhs = DVector::zeros(n);
        rhs[n - 1] = 1.0;
        if let Some(q) = m.lu().solve(&rhs) {
            best = best.min((y.transpose() * q).iter().map(|v| v.abs()).sum());
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn surrogate_sandwich(z in -50.0f64..50.0, mu in 1e-3f64..1.0) {
        let (h, dh, ddh) = surrogate(z, SmoothingParams::new(mu).unwrap()).unwrap();
        prop_assert!(h <= z.abs() + 1e-12);
        prop_assert!(h >= z.abs() - mu * std::f64::consts::LN_2 - 1e-12);
        prop_assert!(dh.abs() <= 1.0);
        prop_assert!(ddh >= 0.0 && ddh <= 1.0 / mu * (1.0 + 1e-12));
    }

    #[test]
    fn riemannian_derivatives_are_tangent(y in data(5, 30), q in unit(5), mu in 0.01f64..0.5) {
        let (g, h) = riemannian_grad_hess(&q, &y, SmoothingParams::new(mu).unwrap()).unwrap();
        let qv = q.as_vector();
        let scale = 1.0 + g.norm() + h.norm();
        prop_assert!(g.dot(qv).abs() <= 1e-12 * scale);
        prop_assert!((&h * qv).amax() <= 1e-12 * scale);
        prop_assert!((&h - h.transpose()).amax() <= 1e-12 * scale);
    }

    #[test]
    fn retraction_stays_on_sphere(q in unit(6), coeffs in prop::collection::vec(-2.0f64..2.0, 5)) {
        let u = tangent_basis(&q);
        prop_assert!((u.transpose() * &u - DMatrix::identity(5, 5)).amax() <= 1e-12);
        prop_assert!((u.transpose() * q.as_vector()).amax() <= 1e-12);
        let step = &u * DVector::from_vec(coeffs);
        let next = retract(&q, &step).unwrap();
        prop_assert!((next.as_vector().norm() - 1.0).abs() <= 1e-12);
        let same = retract(&q, &DVector::zeros(6)).unwrap();
        prop_assert_eq!(same.as_vector(), q.as_vector());
    }

    #[test]
    fn subproblem_optimality_conditions(b in matrix(4, 4), g in prop::collection::vec(-2.0f64..2.0, 4), delta in 0.05f64..3.0) {
        let b = (&b + b.transpose()) * 0.5;
        let sp = TrSubproblem::new(b.clone(), DVector::from_vec(g), delta).unwrap();
        let sol = solve_subproblem(&sp).unwrap();
        let lmin = SymmetricEigen::new(b).eigenvalues.min();
        prop_assert!(sol.xi.norm() <= delta * (1.0 + 1e-10));
        prop_assert!(sol.multiplier >= -1e-10);
        prop_assert!(lmin + sol.multiplier >= -1e-8 * (1.0 + lmin.abs()));
        prop_assert!(sol.multiplier * (delta - sol.xi.norm()) <= 1e-8 * (1.0 + sol.multiplier) * delta);
        prop_assert!(kkt_residual(&sp, &sol) <= 1e-8);
    }

    #[test]
    fn rounding_matches_vertex_enumeration(
        (n, p) in (2usize..=4).prop_flat_map(|n| (Just(n), n..=(12 - n))),
        seed in any::<u64>(),
    ) {
        let y = DataMatrix::new(DMatrix::from_fn(n, p, |i, j| {
            let s = derive_seed(seed, &[i as u64, j as u64]);
            (s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        }));
        let r = DVector::from_fn(n, |i, _| ((derive_seed(seed, &[99, i as u64]) >> 11) as f64 / (1u64 << 53) as f64) - 0.3);
        prop_assume!(r.norm() > 1e-3);
        let sol = lp_round_certified(&RoundingProblem { yhat: &y, r: r.clone() }).unwrap();
        let oracle = vertex_minimum(&y.entries, &r);
        prop_assert!((sol.objective - oracle).abs() <= 1e-9 * oracle.max(1.0));
        // Duality and complementary slackness of the certificate.
        prop_assert!((sol.objective - sol.dual_objective).abs() <= 1e-9 * oracle.max(1.0));
        prop_assert!((r.dot(&sol.q_raw) - 1.0).abs() <= 1e-9);
        let scores = y.entries.transpose() * &sol.q_raw;
        for (s, z) in sol.signs.iter().zip(scores.iter()) {
            prop_assert!(s.abs() <= 1.0 + 1e-12);
            if z.abs() > 1e-9 {
                prop_assert!((s - z.signum()).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn matching_ignores_signed_permutation_and_scale(
        a in matrix(5, 5),
        perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle(),
        signs in prop::collection::vec(prop::bool::ANY, 5),
        scales in prop::collection::vec(0.1f64..10.0, 5),
    ) {
        prop_assume!(a.column_iter().all(|c| c.norm() > 1e-3));
        let mut b = DMatrix::zeros(5, 5);
        for j in 0..5 {
            let s = if signs[j] { -scales[j] } else { scales[j] };
            b.set_column(j, &(a.column(perm[j]) * s));
        }
        let m = match_error(&b, &a);
        prop_assert!(m.err <= 1e-7);
        let self_match = match_error(&a, &a);
        prop_assert!(self_match.err <= 1e-7);
    }

    #[test]
    fn whitening_is_idempotent(seed in any::<u64>()) {
        let a = make_orthogonal_dictionary(4, seed).unwrap();
        let mut entries = a.entries.clone();
        entries.column_mut(0).scale_mut(3.0);
        let a = sdct_core::DictionaryMatrix { entries, ..a };
        let x = sample_bg(4, 400, 0.3, seed ^ 1).unwrap();
        let y = synthesize(&a, &x).unwrap();
        let once = precondition(&y, 0.3).unwrap();
        let twice = precondition(&once, 0.3).unwrap();
        prop_assert!((&once.entries - &twice.entries).amax() <= 1e-10 * once.entries.amax());
        let gram = &once.entries * once.entries.transpose() / (400.0 * 0.3);
        prop_assert!((gram - DMatrix::identity(4, 4)).amax() <= 1e-10);
    }

    #[test]
    fn derived_seeds_are_deterministic_and_path_sensitive(master in any::<u64>(), a in any::<u64>(), b in any::<u64>()) {
        prop_assert_eq!(derive_seed(master, &[a, b]), derive_seed(master, &[a, b]));
        prop_assume!(a != b);
        prop_assert_ne!(derive_seed(master, &[a, b]), derive_seed(master, &[b, a]));
    }

    #[test]
    fn binary_matrix_round_trip(m in (1usize..6, 1usize..6).prop_flat_map(|(r, c)| matrix(r, c))) {
        let mut buf = Vec::new();
        write_matrix(&m, &mut buf).unwrap();
        prop_assert_eq!(buf.len(), 16 + 8 * m.len());
        prop_assert_eq!(read_matrix(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn phase_csv_round_trip(rows in prop::collection::vec(
        (1usize..200, 1usize..200, 0usize..10, any::<u64>(), 0.0f64..1.5, any::<bool>(), 0usize..10_000, 0.0f64..1e6),
        0..20,
    )) {
        let rows: Vec<PhaseRow> = rows
            .into_iter()
            .map(|(n, k, trial, seed, re, success, iters, runtime_ms)| PhaseRow { n, k, trial, seed, re, success, iters, runtime_ms })
            .collect();
        let mut buf = Vec::new();
        write_phase_csv(&rows, &mut buf).unwrap();
        prop_assert_eq!(read_phase_csv(buf.as_slice()).unwrap(), rows);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn adm_iterates_orthogonal_and_monotone(seed in any::<u64>(), lambda in 0.05f64..1.0) {
        let a = make_orthogonal_dictionary(5, seed).unwrap();
        let x = sample_bg(5, 300, 0.2, seed ^ 7).unwrap();
        let y = synthesize(&a, &x).unwrap();
        let r = adm_orthogonal(&y, lambda, 20, seed ^ 9).unwrap();
        prop_assert!(r.max_orthogonality_residual <= 1e-10);
        for w in r.trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
        }
    }
}

#[test]
fn deflation_never_revisits_earlier_rows() {
    let x0 = sample_bg(6, 1080, 0.15, 41).unwrap();
    let a0 = make_orthogonal_dictionary(6, 42).unwrap();
    let y = synthesize(&a0, &x0).unwrap();
    let mu = SmoothingParams::new(0.01).unwrap();
    let cfg = TrmConfig::default();
    let full = recover_first_rows(&y, mu, &cfg, 43, 6);
    for count in 1..6 {
        let part = recover_first_rows(&y, mu, &cfg, 43, count);
        assert_eq!(part.stages.len(), count);
        for (a, b) in part.stages.iter().zip(&full.stages) {
            assert_eq!(a.q, b.q);
            assert_eq!(a.r, b.r);
        }
    }
}
