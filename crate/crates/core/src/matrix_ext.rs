//! Entrywise extension of a scalar code to a matrix product `A (m x l) B (l x k)`.
//!
//! Every entry of `A` and `B` is shared with its own independent copy of the
//! scalar code's noise; node `i` multiplies its two share matrices and the
//! decoder applies the scalar weights to each output entry.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::accuracy::{product_cov, snr_a};
use crate::error::{Error, Result};
use crate::montecarlo::{DataLaw, Moments, ShareSampler, SimConfig, SimResult, merge_all, run_blocks};
use crate::schemes::{LinearCode, Side};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixDims {
    pub m: usize,
    pub l: usize,
    pub k: usize,
}

impl MatrixDims {
    pub fn new(m: usize, l: usize, k: usize) -> Result<Self> {
        if m == 0 || l == 0 || k == 0 {
            return Err(Error::Domain("matrix dimensions must be positive".into()));
        }
        Ok(MatrixDims { m, l, k })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSimResult {
    pub dims: MatrixDims,
    /// Row-major over the `m x k` output entries.
    pub per_entry: Vec<SimResult>,
    /// The entry with the largest empirical MSE.
    pub worst: SimResult,
    /// `eta^2 / (1 + SNR_a)` of the scalar code.
    pub scalar_lmse: f64,
}

pub fn simulate_matrix_lmse(
    code: &LinearCode,
    dims: MatrixDims,
    law: DataLaw,
    cfg: SimConfig,
) -> Result<MatrixSimResult> {
    let acc = snr_a(code)?;
    let d = acc.decoder_weights.clone();
    let n = code.n_nodes();
    let MatrixDims { m, l, k } = dims;
    if cfg.n < crate::montecarlo::MIN_SAMPLES || cfg.workers == 0 {
        return Err(Error::Precondition("need at least 1000 samples and one worker".into()));
    }
    let parts = run_blocks(&cfg, |w| w as u64, |rng, count, _| {
        let mut sa = ShareSampler::new(code, Side::A);
        let mut sb = ShareSampler::new(code, Side::B);
        let mut a = vec![0.0; m * l];
        let mut b = vec![0.0; l * k];
        // Shares stored node-major: sh_a[i * m * l + p * l + q].
        let mut sh_a = vec![0.0; n * m * l];
        let mut sh_b = vec![0.0; n * l * k];
        let mut node = vec![0.0; n];
        let mut acc = vec![Moments::default(); m * k];
        for _ in 0..count {
            // Same draw order as the scalar simulation: data first, then noise.
            a.iter_mut().for_each(|x| *x = law.sample(rng));
            b.iter_mut().for_each(|x| *x = law.sample(rng));
            for (e, &x) in a.iter().enumerate() {
                sa.draw(x, rng, &mut node);
                for i in 0..n {
                    sh_a[i * m * l + e] = node[i];
                }
            }
            for (e, &x) in b.iter().enumerate() {
                sb.draw(x, rng, &mut node);
                for i in 0..n {
                    sh_b[i * l * k + e] = node[i];
                }
            }
            for p in 0..m {
                for q in 0..k {
                    let truth: f64 = (0..l).map(|r| a[p * l + r] * b[r * k + q]).sum();
                    let est: f64 = (0..n)
                        .map(|i| {
                            let ai = &sh_a[i * m * l..];
                            let bi = &sh_b[i * l * k..];
                            d[i] * (0..l).map(|r| ai[p * l + r] * bi[r * k + q]).sum::<f64>()
                        })
                        .sum();
                    let err = truth - est;
                    acc[p * k + q].push(err * err);
                }
            }
        }
        acc
    });
    let per_entry: Vec<SimResult> = (0..m * k)
        .map(|e| {
            let col: Vec<Moments> = parts.iter().map(|p| p[e]).collect();
            merge_all(&col).to_result(cfg.seed)
        })
        .collect();
    let worst = *per_entry
        .iter()
        .max_by(|x, y| x.mse.total_cmp(&y.mse))
        .expect("at least one entry");
    Ok(MatrixSimResult { dims, per_entry, worst, scalar_lmse: acc.lmse })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub max_rel_err: f64,
}

/// Assembles the matrix-case `K1`, `K2` of one output entry from per-entry
/// second moments and compares them with `l` times the scalar pair.
///
/// Shares of distinct entries are uncorrelated, so only the diagonal
/// `l1 = l2` terms of the double sums survive; the sums are still carried out
/// in full.
pub fn matrix_cov_identity_check(code: &LinearCode, l: usize) -> Result<IdentityCheck> {
    if l == 0 {
        return Err(Error::Domain("l must be positive".into()));
    }
    let n = code.n_nodes();
    let eta = code.eta();
    let ga = code.gram(Side::A);
    let gb = code.gram(Side::B);
    let (a, b) = (code.a_coeffs(), code.b_coeffs());
    let entry_moment = |g: &DMatrix<f64>, i: usize, j: usize, l1: usize, l2: usize| {
        if l1 == l2 { g[(i, j)] } else { 0.0 }
    };
    let mut k1 = DMatrix::zeros(n, n);
    let mut cross = vec![0.0; n];
    let mut signal_power = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for l1 in 0..l {
                for l2 in 0..l {
                    s += entry_moment(&ga, i, j, l1, l2) * entry_moment(&gb, i, j, l1, l2);
                }
            }
            k1[(i, j)] = s;
        }
        // E[(AB)[m,k] C_i[m,k]] = sum_l E[A A~_i] E[B B~_i].
        cross[i] = (0..l).map(|_| eta * a[i] * eta * b[i]).sum();
    }
    for _ in 0..l {
        signal_power += eta * eta;
    }
    let k2 = DMatrix::from_fn(n, n, |i, j| {
        k1[(i, j)] - a[i] * b[i] * cross[j] - a[j] * b[j] * cross[i]
            + a[i] * b[i] * a[j] * b[j] * signal_power
    });
    let scalar = product_cov(code);
    let lf = l as f64;
    let rel = |mat: &DMatrix<f64>, bar: &DMatrix<f64>| {
        let target = bar * lf;
        let scale = target.amax().max(f64::MIN_POSITIVE);
        (mat - &target).amax() / scale
    };
    Ok(IdentityCheck { max_rel_err: rel(&k1, &scalar.k1).max(rel(&k2, &scalar.k2)) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schemes::build_iid_baseline;

    #[test]
    fn zero_dims_rejected() {
        assert!(MatrixDims::new(0, 1, 1).is_err());
    }

    #[test]
    fn identity_for_l_one() {
        let code = build_iid_baseline(3, 1.0, 1.0).unwrap();
        assert!(matrix_cov_identity_check(&code, 1).unwrap().max_rel_err < 1e-12);
    }
}
