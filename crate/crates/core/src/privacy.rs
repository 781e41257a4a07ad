//! What colluding nodes learn about the inputs, and DP bookkeeping.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::NoiseSpec;
use crate::error::{Error, Result};
use crate::estimation::{Snr, mse_from_snr};
use crate::schemes::{LayeredParams, LinearCode};
use crate::subsets::combinations;

pub use crate::schemes::Side;

/// SNRs of one colluding subset about each input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSnr {
    pub subset: Vec<usize>,
    pub snr_a: Snr,
    pub snr_b: Snr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    pub t: usize,
    pub snr_p: Snr,
    pub worst_subset: Vec<usize>,
    pub per_subset: Vec<SubsetSnr>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dp_epsilon_bound: Option<f64>,
}

/// SNR of the best linear estimate of one input from the given nodes'
/// shares. The empty subset learns nothing.
pub fn subset_snr(code: &LinearCode, subset: &[usize], side: Side) -> Result<Snr> {
    if let Some(&bad) = subset.iter().find(|&&i| i >= code.n_nodes()) {
        return Err(Error::Domain(format!("node {bad} out of range")));
    }
    if subset.is_empty() {
        return Ok(Snr::Finite(0.0));
    }
    Ok(code.subset_model(side, subset)?.snr())
}

/// Worst-case privacy SNR over all `t`-subsets and both inputs.
pub fn snr_p(code: &LinearCode, t: usize) -> Result<PrivacyReport> {
    if t == 0 || t > code.n_nodes() {
        return Err(Error::Precondition(format!(
            "need 1 <= t <= N, got t={t}, N={}",
            code.n_nodes()
        )));
    }
    let mut per_subset = Vec::new();
    let mut best: Option<(Snr, Vec<usize>)> = None;
    for s in combinations(code.n_nodes(), t)? {
        let snr_a = subset_snr(code, &s, Side::A)?;
        let snr_b = subset_snr(code, &s, Side::B)?;
        let m = snr_a.max(snr_b);
        if best.as_ref().is_none_or(|(b, _)| m > *b) {
            best = Some((m, s.clone()));
        }
        per_subset.push(SubsetSnr { subset: s, snr_a, snr_b });
    }
    let (snr_p, worst_subset) = best.expect("at least one subset");
    Ok(PrivacyReport { t, snr_p, worst_subset, per_subset, dp_epsilon_bound: None })
}

/// MSE of the best linear adversary holding `subset`: `eta / (1 + SNR)`.
pub fn adversary_mse(code: &LinearCode, subset: &[usize], side: Side) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::Precondition("adversary subset must be nonempty".into()));
    }
    Ok(mse_from_snr(code.eta(), subset_snr(code, subset, side)?))
}

/// DP parameter of the layered code with staircase base layer `epsilon_star`.
///
/// A subset without node `t+1` sees only shifted copies of the staircase
/// layer and stays `epsilon_star`-DP. A subset holding node `t+1` can cancel
/// the staircase layer; what is left is `A` seen through the unit Laplace
/// noises with gains `alpha1 |g'_i| / (alpha2 x)`, `g' = 1^T G_S^{-1}`, each
/// adding `sqrt(2)` times its gain.
pub fn dp_bound_layered(params: &LayeredParams, epsilon_star: f64) -> Result<f64> {
    if !(epsilon_star.is_finite() && epsilon_star > 0.0) {
        return Err(Error::Domain(format!("epsilon_star must be positive, got {epsilon_star}")));
    }
    let g = params.validate()?;
    let t = params.t;
    let mut worst = epsilon_star;
    for others in combinations(t, t - 1)? {
        let g_s: DMatrix<f64> = g.select_columns(&others);
        let Some(inv) = g_s.clone().try_inverse() else {
            return Ok(f64::INFINITY);
        };
        let g_prime = DVector::from_element(t - 1, 1.0).transpose() * inv;
        let extra: f64 = if params.alpha1 == 0.0 {
            0.0
        } else {
            let gain = std::f64::consts::SQRT_2 * params.alpha1 / (params.alpha2 * params.x);
            g_prime.iter().map(|gp| gain * gp.abs()).sum()
        };
        worst = worst.max(epsilon_star + extra);
    }
    Ok(worst)
}

/// Independent composition over the colluders' private noises.
pub fn dp_bound_iid(n_colluders: usize, epsilon_per_node: f64) -> Result<f64> {
    if n_colluders == 0 || !(epsilon_per_node.is_finite() && epsilon_per_node > 0.0) {
        return Err(Error::Domain("need a positive count and epsilon".into()));
    }
    Ok(n_colluders as f64 * epsilon_per_node)
}

/// Privacy loss, in nats, of shifting one noise variable by `shift`.
fn shift_loss(spec: &NoiseSpec, shift: f64) -> f64 {
    let d = shift.abs();
    if d <= 1e-12 {
        return 0.0;
    }
    match *spec {
        // The density drops by exp(-epsilon) per unit of `scale`, so a shift
        // of up to k units costs k epsilon.
        NoiseSpec::Staircase { epsilon, scale } => epsilon * (d / scale * (1.0 - 1e-12)).ceil(),
        NoiseSpec::Laplace { variance } => d / (variance / 2.0).sqrt(),
        NoiseSpec::Gaussian { .. } => f64::INFINITY,
    }
}

/// Composition bound for what `nodes` see of one input, valid for any code.
///
/// Rows of the view that are combinations of others are post-processing and
/// dropped. For the remaining `r` rows and any `r` noise columns `J` with an
/// invertible block `M_J`, the view is a bijection of `M_J^{-1} a A + R_J`
/// once the other noises are fixed, so a unit change of `A` shifts noise `k`
/// by `(M_J^{-1} a)_k`. The bound is the cheapest such `J`.
pub fn view_dp_bound(code: &LinearCode, nodes: &[usize], side: Side) -> Result<f64> {
    let specs = code.noise_specs(side);
    let rows = code.rows(side);
    let m = specs.len();
    let coeffs = code.data_coeffs(side);
    let scale = nodes
        .iter()
        .flat_map(|&i| rows.row(i).iter().map(|x| x.abs()).collect::<Vec<_>>())
        .fold(0.0_f64, f64::max);
    if scale == 0.0 {
        return Ok(0.0);
    }
    // Greedy basis of the noise rows; each dropped row must carry a matching
    // data coefficient or the input leaks without noise.
    let mut basis: Vec<usize> = Vec::new();
    let noise_row = |i: usize| DVector::from_fn(m, |k, _| rows[(i, k + 1)]);
    for &i in nodes {
        let cand: Vec<usize> = basis.iter().copied().chain([i]).collect();
        let mat = DMatrix::from_fn(m, cand.len(), |k, c| rows[(cand[c], k + 1)]);
        let rank = if m == 0 { 0 } else { mat.rank(1e-10 * scale) };
        if rank == cand.len() {
            basis.push(i);
            continue;
        }
        let consistent = if basis.is_empty() {
            coeffs[i].abs() <= 1e-10 * scale
        } else {
            let mb = DMatrix::from_fn(m, basis.len(), |k, c| rows[(basis[c], k + 1)]);
            let lambda = mb
                .svd(true, true)
                .solve(&noise_row(i), 1e-12 * scale)
                .map_err(|e| Error::Internal(e.to_string()))?;
            let implied: f64 = basis.iter().zip(lambda.iter()).map(|(&j, l)| l * coeffs[j]).sum();
            (coeffs[i] - implied).abs() <= 1e-9 * scale
        };
        if !consistent {
            return Ok(f64::INFINITY);
        }
    }
    let r = basis.len();
    if r == 0 {
        return Ok(0.0);
    }
    let a = DVector::from_fn(r, |c, _| coeffs[basis[c]]);
    let mut best = f64::INFINITY;
    for cols in combinations(m, r)? {
        let block = DMatrix::from_fn(r, r, |i, j| rows[(basis[i], cols[j] + 1)]);
        if block.determinant().abs() <= 1e-12 * scale.powi(r as i32) {
            continue;
        }
        let Some(c) = block.lu().solve(&a) else { continue };
        let loss: f64 = cols.iter().zip(c.iter()).map(|(&k, &ck)| shift_loss(&specs[k], ck)).sum();
        best = best.min(loss);
    }
    Ok(best)
}

/// Worst [`view_dp_bound`] over all `t`-subsets and both inputs.
pub fn dp_bound_generic(code: &LinearCode, t: usize) -> Result<f64> {
    if t == 0 || t > code.n_nodes() {
        return Err(Error::Precondition(format!("need 1 <= t <= N, got t={t}")));
    }
    let mut worst = 0.0_f64;
    for s in combinations(code.n_nodes(), t)? {
        for side in [Side::A, Side::B] {
            worst = worst.max(view_dp_bound(code, &s, side)?);
        }
    }
    Ok(worst)
}
