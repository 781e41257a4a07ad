#![allow(dead_code)]

use dpsecmul_core::{LinearCode, NoiseSpec};
use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Random code with Gaussian coefficients, `m` unit-variance Gaussian
/// noises per side and the given `eta`.
pub fn random_code(rng: &mut ChaCha8Rng, n: usize, m: usize, eta: f64) -> LinearCode {
    let v = gaussian_matrix(rng, n, 1 + m);
    let w = gaussian_matrix(rng, n, 1 + m);
    let specs = vec![NoiseSpec::unit_gaussian(); m];
    LinearCode::new(v, w, specs.clone(), specs, eta).unwrap()
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
