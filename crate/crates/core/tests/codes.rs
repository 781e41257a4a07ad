mod common;

use dpsecmul_core::accuracy::{
    analytic_decoder, converse_check, decoder_mse, delta_matrix, null_vector, product_cov, snr_a,
};
use dpsecmul_core::estimation::snr_from_cov;
use dpsecmul_core::privacy::{dp_bound_layered, snr_p, subset_snr};
use dpsecmul_core::schemes::{
    build_iid_baseline, build_layered, build_shamir_real, check_mixing_matrix, default_g,
    lagrange_at_zero,
};
use dpsecmul_core::subsets::combinations;
use dpsecmul_core::{LayeredParams, LinearCode, NoiseKind, NoiseSpec, Side};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn layered(t: usize, x: f64, a1: f64, a2: f64, eta: f64) -> LinearCode {
    build_layered(&LayeredParams::new(t, x, a1, a2), NoiseKind::UnitGaussianAnalysis, eta).unwrap()
}

#[test]
fn tight_tradeoff_point() {
    let a1: f64 = 1e-5;
    let code = layered(2, 1.0, a1, a1.powf(2.0 / 3.0), 1.0);
    let p = snr_p(&code, 2).unwrap().snr_p.value();
    let a = snr_a(&code).unwrap().snr_a.value();
    assert!((1.0..=1.02).contains(&p), "snr_p={p}");
    assert!((2.9..=3.0).contains(&a), "snr_a={a}");
    assert!((1.0 + p).powi(2) - (1.0 + a) <= 0.05);
}

#[test]
fn single_node_layered_closed_forms() {
    // t=1, alpha=0: both nodes hold A + x R, so SNR_p = eta/x^2 and the
    // product of one share has E[C^2] = (eta + x^2)^2 with noise part
    // E[C^2] - eta^2.
    for (eta, x) in [(1.0, 1.0), (2.0, 0.5), (0.3, 1.7)] {
        let code = layered(1, x, 0.0, 0.0, eta);
        let r = eta / (x * x);
        assert!(common::rel_diff(snr_p(&code, 1).unwrap().snr_p.value(), r) < 1e-12);
        let sa = snr_a(&code).unwrap().snr_a.value();
        let total = (eta + x * x).powi(2);
        assert!(common::rel_diff(1.0 + sa, total / (total - eta * eta)) < 1e-12);
        // Any alpha > 0 approaches the square bound from below.
        let near = layered(1, x, 1e-4, 0.0, eta);
        let sa = snr_a(&near).unwrap().snr_a.one_plus();
        assert!(sa <= (1.0 + r).powi(2) && sa > (1.0 + r).powi(2) * (1.0 - 1e-3));
    }
}

#[test]
fn both_snr_routes_agree_on_codes() {
    let mut rng = common::rng(5);
    for _ in 0..100 {
        let code = common::random_code(&mut rng, 3, 3, 1.3);
        let via_factor = snr_a(&code).unwrap().snr_a.value();
        let via_cov = snr_from_cov(&product_cov(&code)).unwrap().value();
        assert!(common::rel_diff(via_factor, via_cov) < 1e-7);
    }
}

#[test]
fn analytic_decoder_is_optimal_for_layered() {
    for t in 2..=4 {
        let g = default_g(t).unwrap();
        check_mixing_matrix(&g, t).unwrap();
        // The two-observation decoder is optimal only as alpha -> 0; its
        // excess shrinks like alpha1^2.
        let excess = |a1: f64| {
            let code = layered(t, 1.0, a1, a1.powf(2.0 / 3.0), 1.0);
            let d = analytic_decoder(&code).unwrap();
            let best = snr_a(&code).unwrap().lmse;
            (decoder_mse(&code, &d).unwrap() - best) / best
        };
        let (e2, e3) = (excess(1e-2), excess(1e-3));
        assert!(e2 >= -1e-9 && e3 >= -1e-9);
        assert!(e3 < 1e-5 && e3 < e2 / 50.0, "t={t}: {e2} {e3}");
    }
}

#[test]
fn delta_frobenius_norm_is_decoder_mse() {
    let mut rng = common::rng(6);
    for _ in 0..50 {
        let code = common::random_code(&mut rng, 4, 2, 0.8);
        let d: Vec<f64> = common::gaussian_matrix(&mut rng, 4, 1).iter().copied().collect();
        let delta = delta_matrix(&code, &d).unwrap();
        let mse = decoder_mse(&code, &d).unwrap();
        assert!(common::rel_diff(delta.norm_squared(), mse) < 1e-9);
    }
}

#[test]
fn converse_holds_on_random_codes() {
    let mut rng = common::rng(7);
    let mut checked = 0;
    for t in 1..=4 {
        for n in t..=2 * t {
            for m in [1, t, t + 1] {
                for _ in 0..10 {
                    let code = common::random_code(&mut rng, n, m, 1.0);
                    let rec = converse_check(&code, t).unwrap();
                    assert!(rec.holds && rec.square_holds, "{rec:?}");
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 200);
}

#[test]
fn converse_refuses_honest_majority() {
    let code = build_shamir_real(3, 1, &[1.0, 2.0, 3.0], 1.0, 1.0).unwrap();
    assert!(converse_check(&code, 1).is_err());
}

#[test]
fn no_more_nodes_than_colluders() {
    // N = t: the colluders see every share, so they decode AB as well as the
    // user does, and LMSE >= eta^2 / (1 + SNR_p).
    let mut rng = common::rng(8);
    for i in 0..100 {
        let t = 1 + i % 4;
        let code = common::random_code(&mut rng, t, 1 + i % 3, 1.0);
        let lmse = snr_a(&code).unwrap().lmse;
        let p = snr_p(&code, t).unwrap().snr_p.one_plus();
        assert!(lmse >= 1.0 / p - 1e-9);
    }
}

#[test]
fn shamir_majority_decodes_exactly() {
    for t in 1..=3 {
        let n = 2 * t + 1;
        let points: Vec<f64> = (1..=n).map(|i| i as f64).collect();
        let code = build_shamir_real(n, t, &points, 2.0, 1.0).unwrap();
        assert!(snr_a(&code).unwrap().snr_a.is_infinite());
        let mse = decoder_mse(&code, &lagrange_at_zero(&points)).unwrap();
        assert!(mse < 1e-12, "t={t}: {mse}");
        // Over the reals t shares leak a finite SNR that falls as the
        // noise grows; only t+1 shares expose the secret.
        let louder = build_shamir_real(n, t, &points, 200.0, 1.0).unwrap();
        for s in combinations(n, t).unwrap() {
            let quiet = subset_snr(&code, &s, Side::A).unwrap();
            let loud = subset_snr(&louder, &s, Side::A).unwrap();
            assert!(!quiet.is_infinite() && loud.value() < quiet.value() / 50.0);
        }
        assert!(subset_snr(&code, &(0..=t).collect::<Vec<_>>(), Side::A).unwrap().is_infinite());
    }
}

#[test]
fn null_vectors_bound_the_error() {
    let mut rng = common::rng(9);
    for i in 0..1000 {
        let n = 2 + i % 4;
        let m = 1 + i % 3;
        let code = common::random_code(&mut rng, n, m, 0.5 + (i % 5) as f64 * 0.5);
        let k = 1 + i % (n - 1);
        let subset: Vec<usize> = (0..k).collect();
        let side = if i % 2 == 0 { Side::A } else { Side::B };
        let nv = null_vector(&code, &subset, side).unwrap();
        let rows = code.normalized_rows(side);
        for &j in &subset {
            assert!(rows.row(j).transpose().dot(&nv.lambda).abs() <= 1e-10);
        }
        let snr = subset_snr(&code, &subset, side).unwrap();
        assert!(nv.first_coordinate_fraction() >= 1.0 / snr.one_plus() - 1e-9);
    }
}

#[test]
fn doubling_noise_halves_single_node_snr() {
    let code = layered(1, 1.0, 0.0, 0.0, 1.0);
    let louder = code
        .map_noise(|s| match *s {
            NoiseSpec::Gaussian { variance } => NoiseSpec::Gaussian { variance: 2.0 * variance },
            other => other,
        })
        .unwrap();
    let a = subset_snr(&code, &[0], Side::A).unwrap().value();
    let b = subset_snr(&louder, &[0], Side::A).unwrap().value();
    assert!(common::rel_diff(a, 2.0 * b) < 1e-12);
}

#[test]
fn dp_bound_grows_with_alpha_ratio() {
    let p = |a1: f64| LayeredParams::new(3, 1.0, a1, 0.1);
    let lo = dp_bound_layered(&p(1e-4), 1.0).unwrap();
    let hi = dp_bound_layered(&p(1e-2), 1.0).unwrap();
    assert!(lo > 1.0 && hi > lo);
}

#[test]
fn malformed_documents_report_position() {
    let err = LinearCode::from_json("{\n  \"n_nodes\": 2,\n  \"eta\": oops\n}").unwrap_err();
    assert_eq!(err.line(), 3);
    let code = build_iid_baseline(2, 1.0, 1.0).unwrap();
    let doctored = code.to_json().replace("\"eta\"", "\"bogus\": 1, \"eta\"");
    assert!(LinearCode::from_json(&doctored).is_err());
}

proptest! {
    #[test]
    fn json_round_trip_is_bit_exact(seed in 0u64..100_000, n in 1usize..5, m in 0usize..4) {
        let mut rng = common::rng(seed);
        let code = common::random_code(&mut rng, n, m, 0.1 + (seed % 97) as f64 / 7.0);
        let text = code.to_json();
        let back = LinearCode::from_json(&text).unwrap();
        prop_assert_eq!(&back, &code);
        prop_assert_eq!(back.to_json(), text);
    }

    #[test]
    fn privacy_never_shrinks_with_more_colluders(seed in 0u64..100_000, n in 2usize..6) {
        let mut rng = common::rng(seed);
        let code = common::random_code(&mut rng, n, 2, 1.0);
        let mut prev = 0.0;
        for t in 1..=n {
            let cur = snr_p(&code, t).unwrap().snr_p.value();
            prop_assert!(cur >= prev * (1.0 - 1e-9));
            prev = cur;
        }
    }

    // Below alpha1 ~ 1e-5 the rows are so close to parallel that rounding
    // alone moves SNR_a by more than the 1e-9 tolerance.
    #[test]
    fn converse_on_layered_family(t in 1usize..5, log_a in -5.0f64..0.0, x in 0.2f64..3.0) {
        let a1 = 10f64.powf(log_a);
        let code = layered(t, x, a1, a1.powf(2.0 / 3.0), 1.0);
        let rec = converse_check(&code, t).unwrap();
        prop_assert!(rec.holds && rec.square_holds);
    }

    #[test]
    fn snr_invariant_under_noise_relabelling(seed in 0u64..100_000) {
        let mut rng = common::rng(seed);
        let code = common::random_code(&mut rng, 3, 3, 1.0);
        // Reverse the noise columns on both sides.
        let flip = |m: &DMatrix<f64>| {
            DMatrix::from_fn(m.nrows(), m.ncols(), |i, k| if k == 0 { m[(i, 0)] } else { m[(i, m.ncols() - k)] })
        };
        let specs = vec![NoiseSpec::unit_gaussian(); 3];
        let other = LinearCode::new(flip(code.v()), flip(code.w()), specs.clone(), specs, 1.0).unwrap();
        let a = snr_a(&code).unwrap().snr_a.value();
        let b = snr_a(&other).unwrap().snr_a.value();
        prop_assert!(common::rel_diff(a, b) < 1e-9);
    }
}
