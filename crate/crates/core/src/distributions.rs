//! Noise laws: the variance-optimal staircase mechanism, Laplace and Gaussian.
//!
//! Every law is zero mean. Sensitivity is fixed to one throughout, so a
//! staircase with parameter `epsilon` is an `epsilon`-DP additive mechanism
//! for inputs that differ by at most one.

use rand::{Rng, RngExt};
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, domain};

const EPS_BRACKET: (f64, f64) = (1e-6, 1e3);
const GRID_STEP: f64 = 1e-3;
const GRID_HALF_WIDTH_STDS: f64 = 10.0;

/// Descriptor of one scalar noise coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    /// `scale * X` where `X` is the variance-optimal staircase for `epsilon`.
    Staircase {
        epsilon: f64,
        #[serde(default = "unit_scale")]
        scale: f64,
    },
    Laplace { variance: f64 },
    Gaussian { variance: f64 },
}

fn unit_scale() -> f64 {
    1.0
}

impl NoiseSpec {
    pub fn staircase(epsilon: f64) -> Self {
        NoiseSpec::Staircase { epsilon, scale: 1.0 }
    }

    pub fn unit_gaussian() -> Self {
        NoiseSpec::Gaussian { variance: 1.0 }
    }

    pub fn unit_laplace() -> Self {
        NoiseSpec::Laplace { variance: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        match *self {
            NoiseSpec::Staircase { epsilon, scale } if ok(epsilon) && ok(scale) => Ok(()),
            NoiseSpec::Laplace { variance } | NoiseSpec::Gaussian { variance } if ok(variance) => {
                Ok(())
            }
            _ => domain(format!("invalid noise spec {self:?}")),
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            NoiseSpec::Staircase { epsilon, scale } => {
                scale * scale * sigma_star_sq(epsilon).unwrap_or(f64::NAN)
            }
            NoiseSpec::Laplace { variance } | NoiseSpec::Gaussian { variance } => variance,
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Natural log of the density at `x`.
    pub fn ln_density(&self, x: f64) -> f64 {
        match *self {
            NoiseSpec::Staircase { epsilon, scale } => {
                Staircase::new(epsilon).ln_density(x / scale) - scale.ln()
            }
            NoiseSpec::Laplace { variance } => {
                let beta = (variance / 2.0).sqrt();
                -x.abs() / beta - (2.0 * beta).ln()
            }
            NoiseSpec::Gaussian { variance } => {
                -0.5 * x * x / variance - 0.5 * (2.0 * std::f64::consts::PI * variance).ln()
            }
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        self.ln_density(x).exp()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        sample(self, rng)
    }
}

/// Smallest variance of an `epsilon`-DP additive noise at sensitivity one.
///
/// With `b = exp(-epsilon)` this is
/// `(2^{-2/3} b^{2/3} (1+b)^{2/3} + b) / (1-b)^2`, the variance of the
/// staircase whose step width is [`staircase_gamma`].
pub fn sigma_star_sq(epsilon: f64) -> Result<f64> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return domain(format!("epsilon must be positive and finite, got {epsilon}"));
    }
    let b = (-epsilon).exp();
    let one_minus_b = -(-epsilon).exp_m1();
    let num = (-2.0 * epsilon / 3.0).exp() * ((1.0 + b) / 2.0).powf(2.0 / 3.0) + b;
    Ok(num / (one_minus_b * one_minus_b))
}

/// The closed form `(2^{2/3} e^{-2ε/3}(1+e^{-2ε/3}) + e^{-ε}) / (1-e^{-ε})^2`.
///
/// Kept only so the disagreement with [`sigma_star_sq`] stays documented by a
/// test: at `epsilon = 1` it exceeds the Laplace variance `2/epsilon^2`, so it
/// cannot be the optimum.
pub fn sigma_star_sq_printed(epsilon: f64) -> Result<f64> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return domain(format!("epsilon must be positive and finite, got {epsilon}"));
    }
    let c = (-2.0 * epsilon / 3.0).exp();
    let one_minus_b = -(-epsilon).exp_m1();
    Ok((2f64.powf(2.0 / 3.0) * c * (1.0 + c) + (-epsilon).exp()) / (one_minus_b * one_minus_b))
}

/// Variance-optimal step width of the unit-sensitivity staircase.
///
/// `gamma = (b^{1/3} ((1+b)/2)^{1/3} - b) / (1-b)`, evaluated through
/// `expm1`/`ln_1p` so it stays accurate as `epsilon -> 0` (limit 1/2).
pub fn staircase_gamma(epsilon: f64) -> f64 {
    let b = (-epsilon).exp();
    let one_minus_b = -(-epsilon).exp_m1();
    let log_half_one_plus_b = (0.5 * (-epsilon).exp_m1()).ln_1p();
    let excess = ((2.0 * epsilon + log_half_one_plus_b) / 3.0).exp_m1();
    b * excess / one_minus_b
}

/// Inverse of [`sigma_star_sq`] by bisection on `ln epsilon` over `[1e-6, 1e3]`.
pub fn epsilon_from_variance(v: f64) -> Result<f64> {
    if !(v.is_finite() && v > 0.0) {
        return domain(format!("variance must be positive and finite, got {v}"));
    }
    let (lo_eps, hi_eps) = EPS_BRACKET;
    let v_at_lo = sigma_star_sq(lo_eps)?;
    let v_at_hi = sigma_star_sq(hi_eps)?;
    if v > v_at_lo || v < v_at_hi {
        return domain(format!(
            "variance {v} outside the invertible range [{v_at_hi:e}, {v_at_lo:e}]"
        ));
    }
    let (mut lo, mut hi) = (lo_eps.ln(), hi_eps.ln());
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if sigma_star_sq(mid.exp())? > v {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// Unit-scale staircase with sensitivity one.
#[derive(Debug, Clone, Copy)]
struct Staircase {
    epsilon: f64,
    gamma: f64,
    /// Density on the innermost band `[0, gamma)`.
    a: f64,
}

impl Staircase {
    fn new(epsilon: f64) -> Self {
        let gamma = staircase_gamma(epsilon);
        let b = (-epsilon).exp();
        let a = -(-epsilon).exp_m1() / (2.0 * (gamma + (1.0 - gamma) * b));
        Staircase { epsilon, gamma, a }
    }

    fn ln_density(&self, x: f64) -> f64 {
        let y = x.abs();
        let k = y.floor();
        let outer = if y - k >= self.gamma { 1.0 } else { 0.0 };
        self.a.ln() - self.epsilon * (k + outer)
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        // P(G >= k) = b^k with b = exp(-epsilon).
        let e: f64 = rng.sample(Exp1);
        let band = (e / self.epsilon).floor();
        let b = (-self.epsilon).exp();
        let p_inner = self.gamma / (self.gamma + (1.0 - self.gamma) * b);
        let u: f64 = rng.random();
        let offset = if rng.random::<f64>() < p_inner {
            self.gamma * u
        } else {
            self.gamma + (1.0 - self.gamma) * u
        };
        sign * (band + offset)
    }
}

/// Draws one value from `spec`.
pub fn sample<R: Rng + ?Sized>(spec: &NoiseSpec, rng: &mut R) -> f64 {
    match *spec {
        NoiseSpec::Staircase { epsilon, scale } => scale * Staircase::new(epsilon).sample(rng),
        NoiseSpec::Laplace { variance } => {
            let beta = (variance / 2.0).sqrt();
            let e: f64 = rng.sample(Exp1);
            if rng.random::<bool>() { beta * e } else { -beta * e }
        }
        NoiseSpec::Gaussian { variance } => {
            let z: f64 = rng.sample(StandardNormal);
            variance.sqrt() * z
        }
    }
}

/// Supremum over a grid of `density(x) / density(x + shift)`.
///
/// The grid has spacing `1e-3` and spans ten standard deviations on each
/// side. Gaussian noise has an unbounded ratio and returns `+inf` directly.
pub fn dp_ratio(spec: &NoiseSpec, shift: f64) -> Result<f64> {
    spec.validate()?;
    if !(shift.is_finite() && shift.abs() <= 1.0) {
        return domain(format!("shift must lie in [-1, 1], got {shift}"));
    }
    if matches!(spec, NoiseSpec::Gaussian { .. }) {
        return Ok(f64::INFINITY);
    }
    let span = GRID_HALF_WIDTH_STDS * spec.std_dev();
    let steps = (2.0 * span / GRID_STEP).ceil() as usize;
    let mut worst = f64::NEG_INFINITY;
    for i in 0..=steps {
        let x = -span + i as f64 * GRID_STEP;
        let log_ratio = spec.ln_density(x) - spec.ln_density(x + shift);
        worst = worst.max(log_ratio);
    }
    Ok(worst.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gamma_tends_to_half_for_small_epsilon() {
        assert!((staircase_gamma(1e-7) - 0.5).abs() < 1e-6);
        let g = staircase_gamma(1.0);
        assert!(g > 0.0 && g < 0.5);
    }

    #[test]
    fn domain_errors() {
        assert!(sigma_star_sq(0.0).is_err());
        assert!(sigma_star_sq(f64::NAN).is_err());
        assert!(epsilon_from_variance(-1.0).is_err());
        assert!(dp_ratio(&NoiseSpec::unit_laplace(), 1.5).is_err());
    }

    #[test]
    fn laplace_identity_shift() {
        let r = dp_ratio(&NoiseSpec::unit_laplace(), 0.0).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_ratio_unbounded() {
        assert!(dp_ratio(&NoiseSpec::unit_gaussian(), 0.5).unwrap().is_infinite());
    }

    #[test]
    fn scaled_staircase_has_scaled_variance() {
        let s = NoiseSpec::Staircase { epsilon: 1.0, scale: 0.5 };
        assert!((s.variance() - 0.25 * sigma_star_sq(1.0).unwrap()).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = s.sample(&mut rng);
        assert!(x.is_finite());
    }

    #[test]
    fn spec_json_defaults_scale() {
        let s: NoiseSpec = serde_json::from_str(r#"{"kind":"staircase","epsilon":2.0}"#).unwrap();
        assert_eq!(s, NoiseSpec::staircase(2.0));
    }
}
