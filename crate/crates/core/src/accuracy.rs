//! How well `AB` can be recovered from the node products, and the converse.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{CovariancePair, FactoredModel, Snr, mse_from_snr, orthonormal_span};
use crate::privacy::{self, Side};
use crate::schemes::{LinearCode, ones_over};
use crate::subsets::{combinations, complement};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub snr_a: Snr,
    pub lmse: f64,
    pub decoder_weights: Vec<f64>,
}

/// Products `C̃_i` as noisy observations of `AB`.
///
/// Expanding `C̃_i = (a_i A + R̃_i)(b_i B + S̃_i)` gives `a_i b_i AB` plus noise
/// terms `a_i A S_l`, `R_k b_i B` and `R_k S_l`, which are mutually
/// uncorrelated with variances `eta var(S_l)`, `var(R_k) eta` and
/// `var(R_k) var(S_l)`. Those coordinates form the factor of `K2`.
pub fn product_model(code: &LinearCode) -> Result<FactoredModel> {
    let n = code.n_nodes();
    let all: Vec<usize> = (0..n).collect();
    let fa = code.noise_factor(Side::A, &all);
    let fb = code.noise_factor(Side::B, &all);
    let (ma, mb) = (fa.ncols(), fb.ncols());
    let root_eta = code.eta().sqrt();
    let (a, b) = (code.a_coeffs(), code.b_coeffs());
    let f = DMatrix::from_fn(n, mb + ma + ma * mb, |i, c| {
        if c < mb {
            root_eta * a[i] * fb[(i, c)]
        } else if c < mb + ma {
            root_eta * b[i] * fa[(i, c - mb)]
        } else {
            let c = c - mb - ma;
            fa[(i, c / mb)] * fb[(i, c % mb)]
        }
    });
    let s = DVector::from_iterator(n, a.iter().zip(b).map(|(x, y)| x * y));
    FactoredModel::new(f, s, code.eta() * code.eta())
}

/// `K1[i,j] = E[C̃_i C̃_j]` and its noise-only part `K2`.
///
/// `K2` is assembled term by term rather than as `K1 - eta^2 (ab)(ab)^T`, so
/// no cancellation happens when the signal dominates.
pub fn product_cov(code: &LinearCode) -> CovariancePair {
    let eta = code.eta();
    let ga = code.gram(Side::A);
    let gb = code.gram(Side::B);
    let na = code.noise_gram(Side::A);
    let nb = code.noise_gram(Side::B);
    let (a, b) = (code.a_coeffs(), code.b_coeffs());
    let n = code.n_nodes();
    let k1 = ga.component_mul(&gb);
    let k2 = DMatrix::from_fn(n, n, |i, j| {
        eta * a[i] * a[j] * nb[(i, j)] + eta * b[i] * b[j] * na[(i, j)] + na[(i, j)] * nb[(i, j)]
    });
    CovariancePair { k1, k2 }
}

/// Accuracy SNR, optimal decoder and its MSE `eta^2 / (1 + SNR_a)`.
pub fn snr_a(code: &LinearCode) -> Result<AccuracyReport> {
    let model = product_model(code)?;
    let snr = model.snr();
    Ok(AccuracyReport {
        snr_a: snr,
        lmse: mse_from_snr(model.power(), snr),
        decoder_weights: model.weights().iter().copied().collect(),
    })
}

/// Exact MSE of an arbitrary linear decoder.
pub fn decoder_mse(code: &LinearCode, decoder: &[f64]) -> Result<f64> {
    if decoder.len() != code.n_nodes() {
        return Err(Error::Domain("decoder length must equal the node count".into()));
    }
    Ok(product_model(code)?.mse_of(&DVector::from_column_slice(decoder)))
}

/// Coefficients `gamma` on nodes `1..t` of a layered code with
/// `sum gamma_i = 1` and `sum gamma_i g_i = 0`.
pub fn nulling_coefficients(code: &LinearCode) -> Result<Vec<f64>> {
    let n = code.n_nodes();
    let t = n - 1;
    if t == 0 || code.v().ncols() != 1 + t {
        return Err(Error::Precondition("not a layered code".into()));
    }
    if t == 1 {
        return Ok(vec![1.0]);
    }
    // Columns 2..=t of the first t rows are alpha2 * g; the scale is irrelevant.
    let g = DMatrix::from_fn(t - 1, t, |k, i| code.v()[(i, k + 2)]);
    let m = ones_over(&g);
    let mut rhs = DVector::zeros(t);
    rhs[0] = 1.0;
    m.lu()
        .solve(&rhs)
        .map(|g| g.iter().copied().collect())
        .ok_or_else(|| Error::Precondition("mixing matrix admits no nulling combination".into()))
}

/// Two-observation decoder of a layered code: node `t+1` alone and the
/// `gamma`-combination of nodes `1..t`, mixed by a 2x2 LMMSE.
pub fn analytic_decoder(code: &LinearCode) -> Result<Vec<f64>> {
    let gamma = nulling_coefficients(code)?;
    let n = code.n_nodes();
    let t = n - 1;
    let p = DMatrix::from_fn(n, 2, |i, c| match (i, c) {
        (i, 0) => (i == t) as u8 as f64,
        (i, _) if i < t => gamma[i],
        _ => 0.0,
    });
    let model = product_model(code)?;
    let reduced = FactoredModel::new(
        p.transpose() * model.factor(),
        p.transpose() * model.signal(),
        model.power(),
    )?;
    Ok((p * reduced.weights()).iter().copied().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConverseRecord {
    /// `1 + SNR_a`.
    #[serde(with = "crate::serde_inf")]
    pub lhs: f64,
    /// Smallest `(1 + SNR^A_S)(1 + SNR^B_{S^c})` over admissible splits.
    #[serde(with = "crate::serde_inf")]
    pub rhs: f64,
    pub holds: bool,
    pub worst_split: (Vec<usize>, Vec<usize>),
    pub snr_a: Snr,
    pub snr_p: Snr,
    /// `(1 + SNR_p)^2`.
    #[serde(with = "crate::serde_inf")]
    pub square_bound: f64,
    pub square_holds: bool,
}

const CONVERSE_REL_TOL: f64 = 1e-9;

fn le_with_tol(lhs: f64, rhs: f64) -> bool {
    if rhs.is_infinite() {
        return true;
    }
    lhs <= rhs * (1.0 + CONVERSE_REL_TOL)
}

/// Checks `1 + SNR_a <= (1 + SNR^A_S)(1 + SNR^B_{S^c})` over every split with
/// `|S| <= t` and `|S^c| <= t`, and `1 + SNR_a <= (1 + SNR_p)^2`.
///
/// Ties in the minimising split go to the lexicographically smallest `S`.
pub fn converse_check(code: &LinearCode, t: usize) -> Result<ConverseRecord> {
    let n = code.n_nodes();
    if t == 0 || n > 2 * t {
        return Err(Error::Precondition(format!("converse needs N <= 2t, got N={n}, t={t}")));
    }
    let acc = snr_a(code)?;
    let lhs = acc.snr_a.one_plus();
    let mut splits = Vec::new();
    for size in n.saturating_sub(t)..=t.min(n) {
        splits.extend(combinations(n, size)?);
    }
    splits.sort();
    let mut rhs = f64::INFINITY;
    let mut worst = (Vec::new(), Vec::new());
    let mut first = true;
    for s in splits {
        let sc = complement(n, &s);
        let prod = privacy::subset_snr(code, &s, Side::A)?.one_plus()
            * privacy::subset_snr(code, &sc, Side::B)?.one_plus();
        if first || prod < rhs {
            rhs = prod;
            worst = (s, sc);
            first = false;
        }
    }
    let snr_p = if t <= n { privacy::snr_p(code, t)?.snr_p } else { Snr::Finite(0.0) };
    let square_bound = snr_p.one_plus().powi(2);
    Ok(ConverseRecord {
        lhs,
        rhs,
        holds: le_with_tol(lhs, rhs),
        worst_split: worst,
        snr_a: acc.snr_a,
        snr_p,
        square_bound,
        square_holds: le_with_tol(lhs, square_bound),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NullVector {
    pub lambda: DVector<f64>,
    /// The subset recovers the input without noise; `lambda` is then an
    /// arbitrary unit vector orthogonal to the subset's rows.
    pub infinite: bool,
}

impl NullVector {
    /// `lambda_1^2 / |lambda|^2`.
    pub fn first_coordinate_fraction(&self) -> f64 {
        let n2 = self.lambda.norm_squared();
        if n2 == 0.0 { 0.0 } else { self.lambda[0] * self.lambda[0] / n2 }
    }
}

/// `e_1` minus its projection on the span of the subset's normalised rows.
pub fn null_vector(code: &LinearCode, subset: &[usize], side: Side) -> Result<NullVector> {
    let rows = code.normalized_rows(side);
    let dim = rows.ncols();
    if let Some(&bad) = subset.iter().find(|&&i| i >= code.n_nodes()) {
        return Err(Error::Domain(format!("node {bad} out of range")));
    }
    let mut e1 = DVector::zeros(dim);
    e1[0] = 1.0;
    if subset.is_empty() {
        return Ok(NullVector { lambda: e1, infinite: false });
    }
    let span = orthonormal_span(&rows.select_rows(subset).transpose());
    let project_out = |v: &DVector<f64>| v - &span * (span.transpose() * v);
    let lambda = project_out(&e1);
    if lambda[0] > 1e-12 {
        return Ok(NullVector { lambda, infinite: false });
    }
    let best = (0..dim)
        .map(|k| project_out(&DVector::from_fn(dim, |i, _| (i == k) as u8 as f64)))
        .max_by(|x, y| x.norm().total_cmp(&y.norm()))
        .expect("dimension is positive");
    let norm = best.norm();
    let lambda = if norm > 1e-12 { best / norm } else { DVector::zeros(dim) };
    Ok(NullVector { lambda, infinite: true })
}

/// `sum_i d_i v̄_i w̄_i^T - eta e_1 e_1^T` in unit-variance coordinates; its
/// squared Frobenius norm is the decoder's MSE.
pub fn delta_matrix(code: &LinearCode, decoder: &[f64]) -> Result<DMatrix<f64>> {
    if decoder.len() != code.n_nodes() {
        return Err(Error::Domain("decoder length must equal the node count".into()));
    }
    let vb = code.normalized_rows(Side::A);
    let wb = code.normalized_rows(Side::B);
    let mut delta = DMatrix::zeros(vb.ncols(), wb.ncols());
    for (i, &d) in decoder.iter().enumerate() {
        delta += vb.row(i).transpose() * wb.row(i) * d;
    }
    delta[(0, 0)] -= code.eta();
    Ok(delta)
}
