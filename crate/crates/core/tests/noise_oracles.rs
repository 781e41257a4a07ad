mod common;

use approx::assert_relative_eq;
use dpsecmul_core::NoiseSpec;
use dpsecmul_core::distributions::{
    dp_ratio, epsilon_from_variance, sigma_star_sq, sigma_star_sq_printed, staircase_gamma,
};
use proptest::prelude::*;

/// Variance of the unit-sensitivity staircase with step width `gamma`, and
/// the unnormalised mass, summed band by band in closed form.
fn staircase_moments(epsilon: f64, gamma: f64) -> (f64, f64) {
    let b = (-epsilon).exp();
    let bands = (60.0 / epsilon).ceil() as usize + 10;
    let (mut mass, mut second) = (0.0, 0.0);
    for k in 0..bands {
        let k = k as f64;
        let h_in = b.powf(k);
        let h_out = b.powf(k + 1.0);
        mass += 2.0 * (h_in * gamma + h_out * (1.0 - gamma));
        let cube = |y: f64| y * y * y / 3.0;
        second += 2.0 * (h_in * (cube(k + gamma) - cube(k)) + h_out * (cube(k + 1.0) - cube(k + gamma)));
    }
    (second / mass, mass)
}

/// Golden-section search for the variance-minimising step width.
fn best_gamma(epsilon: f64) -> (f64, f64) {
    let f = |g: f64| staircase_moments(epsilon, g).0;
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (1e-9, 1.0 - 1e-9);
    for _ in 0..200 {
        let m1 = hi - phi * (hi - lo);
        let m2 = lo + phi * (hi - lo);
        if f(m1) < f(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let g = 0.5 * (lo + hi);
    (g, f(g))
}

#[test]
fn sigma_star_matches_minimised_band_sum() {
    for eps in [0.05, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0] {
        let (g, var) = best_gamma(eps);
        let closed = sigma_star_sq(eps).unwrap();
        assert!(common::rel_diff(var, closed) < 1e-9, "eps={eps}: {var} vs {closed}");
        assert!((g - staircase_gamma(eps)).abs() < 1e-4, "eps={eps}: gamma {g}");
    }
}

#[test]
fn pinned_values_from_band_sums() {
    for (eps, want) in [(0.5, 7.917017), (1.0, 1.918104), (2.0, 0.422733)] {
        assert!((sigma_star_sq(eps).unwrap() - want).abs() < 1e-5);
    }
}

#[test]
fn printed_closed_form_exceeds_laplace() {
    // Laplace at sensitivity one needs variance 2/eps^2; an optimum cannot exceed it.
    let printed = sigma_star_sq_printed(1.0).unwrap();
    assert!(printed > 2.0);
    assert!(sigma_star_sq(1.0).unwrap() < 2.0);
}

#[test]
fn density_integrates_to_one_by_quadrature() {
    for eps in [0.5, 1.0, 2.0] {
        let spec = NoiseSpec::staircase(eps);
        let h = 1e-4;
        let span = 60.0 / eps;
        let steps = (2.0 * span / h) as usize;
        // Midpoint rule; the density is piecewise constant so this is near exact.
        let total: f64 = (0..steps).map(|i| spec.density(-span + (i as f64 + 0.5) * h) * h).sum();
        assert!((total - 1.0).abs() < 1e-3, "eps={eps}: mass {total}");
    }
}

#[test]
fn density_steps_by_at_most_e_epsilon() {
    for eps in [0.3, 1.0, 3.0] {
        let spec = NoiseSpec::Staircase { epsilon: eps, scale: 1.0 };
        for i in 0..4000 {
            let x = -20.0 + i as f64 * 0.01;
            for s in [-1.0, -0.37, 0.5, 1.0] {
                let lr = spec.ln_density(x) - spec.ln_density(x + s);
                assert!(lr <= eps + 1e-12, "eps={eps}, x={x}, s={s}");
            }
        }
    }
}

#[test]
fn grid_ratio_within_e_epsilon() {
    for eps in [0.5, 1.0, 2.0] {
        for s in [-1.0, -0.5, 0.25, 1.0] {
            let r = dp_ratio(&NoiseSpec::staircase(eps), s).unwrap();
            assert!(r <= eps.exp() * (1.0 + 1e-12), "eps={eps}, s={s}, r={r}");
        }
        // A full step is attained exactly.
        let r = dp_ratio(&NoiseSpec::staircase(eps), 1.0).unwrap();
        assert_relative_eq!(r, eps.exp(), max_relative = 1e-9);
    }
}

#[test]
fn laplace_ratio_closed_form() {
    let v: f64 = 3.0;
    let beta = (v / 2.0).sqrt();
    let r = dp_ratio(&NoiseSpec::Laplace { variance: v }, 1.0).unwrap();
    assert_relative_eq!(r, (1.0 / beta).exp(), max_relative = 1e-9);
    assert!(dp_ratio(&NoiseSpec::unit_gaussian(), 0.5).unwrap().is_infinite());
    assert!(dp_ratio(&NoiseSpec::unit_laplace(), 1.5).is_err());
}

#[test]
fn sampler_variance_within_one_percent() {
    let mut rng = common::rng(11);
    for eps in [0.5, 1.0, 2.0] {
        let spec = NoiseSpec::staircase(eps);
        let n = 1_000_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let z = spec.sample(&mut rng);
            s1 += z;
            s2 += z * z;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        let want = sigma_star_sq(eps).unwrap();
        assert!(common::rel_diff(var, want) < 0.01, "eps={eps}: {var} vs {want}");
    }
}

#[test]
fn laplace_and_gaussian_samplers_have_their_variance() {
    let mut rng = common::rng(12);
    for spec in [NoiseSpec::Laplace { variance: 2.5 }, NoiseSpec::Gaussian { variance: 0.7 }] {
        let n = 400_000;
        let s2: f64 = (0..n).map(|_| spec.sample(&mut rng).powi(2)).sum::<f64>() / n as f64;
        assert!(common::rel_diff(s2, spec.variance()) < 0.02, "{spec:?}: {s2}");
    }
}

proptest! {
    #[test]
    fn inverse_round_trip(log_eps in -4.0f64..4.0) {
        let eps = log_eps.exp();
        let back = epsilon_from_variance(sigma_star_sq(eps).unwrap()).unwrap();
        prop_assert!((back - eps).abs() / eps <= 1e-8);
    }

    #[test]
    fn staircase_beats_laplace(log_eps in -4.0f64..4.0) {
        let eps = log_eps.exp();
        prop_assert!(sigma_star_sq(eps).unwrap() <= 2.0 / (eps * eps));
    }

    #[test]
    fn variance_strictly_decreasing(log_eps in -4.0f64..4.0, step in 0.01f64..1.0) {
        let (e1, e2) = (log_eps.exp(), (log_eps + step).exp());
        prop_assert!(sigma_star_sq(e2).unwrap() < sigma_star_sq(e1).unwrap());
    }

    #[test]
    fn scale_multiplies_variance(eps in 0.1f64..5.0, scale in 0.1f64..10.0) {
        let spec = NoiseSpec::Staircase { epsilon: eps, scale };
        let want = scale * scale * sigma_star_sq(eps).unwrap();
        prop_assert!((spec.variance() - want).abs() <= 1e-12 * want);
    }
}
