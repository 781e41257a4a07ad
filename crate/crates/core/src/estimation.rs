//! Linear estimation of one scalar from correlated noisy observations.
//!
//! Observations `Y = nu * X + Z` with `E[X^2] = gamma^2` have second-moment
//! matrix `K1` and noise-only matrix `K2`. The best linear estimator of
//! `X` reaches SNR `det(K1)/det(K2) - 1` and MSE `gamma^2 / (1 + SNR)`.
//!
//! Two routes are offered. [`snr_from_cov`] takes the covariance pair and
//! uses a pivoted `LDL^T` factorisation in log space. [`FactoredModel`] keeps
//! the noise as an explicit factor `K2 = F F^T` and works on the singular
//! value decomposition of `F`, which never squares the condition number; the
//! scheme analyses use it because their `K2` spans twelve orders of
//! magnitude in eigenvalue.

use std::cmp::Ordering;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Pivots below this fraction of the largest diagonal entry count as zero.
const LDL_SINGULAR_TOL: f64 = 1e-14;
/// Singular values below this fraction of the largest one count as zero.
const SVD_RANK_TOL: f64 = 1e-11;
/// A signal with this relative component outside the noise range is seen
/// without noise.
const RANGE_RESIDUAL_TOL: f64 = 1e-8;
const PSD_TRACE_TOL: f64 = 1e-10;

/// A signal-to-noise ratio that may be infinite (noise-free direction).
///
/// Truth table used everywhere: `Infinite` compares greater than every
/// finite value and equal to itself; `1 + Infinite` and products with it are
/// `+inf` as an `f64`; `mse_from_snr(_, Infinite) = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Snr {
    Finite(f64),
    Infinite,
}

impl Snr {
    pub fn from_f64(v: f64) -> Self {
        if v.is_infinite() && v > 0.0 { Snr::Infinite } else { Snr::Finite(v) }
    }

    /// The value as an `f64`, with `Infinite` mapped to `+inf`.
    pub fn value(self) -> f64 {
        match self {
            Snr::Finite(v) => v,
            Snr::Infinite => f64::INFINITY,
        }
    }

    pub fn one_plus(self) -> f64 {
        1.0 + self.value()
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Snr::Infinite)
    }

    pub fn max(self, other: Snr) -> Snr {
        if other > self { other } else { self }
    }
}

impl PartialOrd for Snr {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (Snr::Infinite, Snr::Infinite) => Some(Ordering::Equal),
            (Snr::Infinite, Snr::Finite(_)) => Some(Ordering::Greater),
            (Snr::Finite(_), Snr::Infinite) => Some(Ordering::Less),
            (Snr::Finite(a), Snr::Finite(b)) => a.partial_cmp(b),
        }
    }
}

impl fmt::Display for Snr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Snr::Finite(v) => write!(f, "{v}"),
            Snr::Infinite => write!(f, "inf"),
        }
    }
}

impl Serialize for Snr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Snr::Finite(v) => s.serialize_f64(*v),
            Snr::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Snr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(Snr::Finite(v)),
            Repr::Text(t) if t == "inf" => Ok(Snr::Infinite),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("invalid snr {t:?}"))),
        }
    }
}

/// Second-moment matrices of signal-plus-noise (`k1`) and noise alone (`k2`).
#[derive(Debug, Clone, PartialEq)]
pub struct CovariancePair {
    pub k1: DMatrix<f64>,
    pub k2: DMatrix<f64>,
}

impl CovariancePair {
    /// Checks symmetry, `k2 >= 0` and `k1 - k2 >= 0` up to round-off.
    pub fn validate(&self) -> Result<()> {
        let n = self.k1.nrows();
        if self.k1.shape() != (n, n) || self.k2.shape() != (n, n) {
            return Err(Error::Domain("covariance pair must be square and equal sized".into()));
        }
        for m in [&self.k1, &self.k2] {
            let scale = m.amax().max(f64::MIN_POSITIVE);
            if (m - m.transpose()).amax() > 1e-12 * scale {
                return Err(Error::Domain("covariance matrix is not symmetric".into()));
            }
        }
        if !is_psd(&self.k2) {
            return Err(Error::Domain("k2 is not positive semidefinite".into()));
        }
        if !is_psd(&(&self.k1 - &self.k2)) {
            return Err(Error::Domain("k1 - k2 is not positive semidefinite".into()));
        }
        Ok(())
    }
}

/// Eigenvalues no smaller than `-1e-10 * trace` count as non-negative.
pub fn is_psd(m: &DMatrix<f64>) -> bool {
    if m.nrows() == 0 {
        return true;
    }
    let sym = (m + m.transpose()) * 0.5;
    let trace: f64 = sym.diagonal().iter().map(|v| v.abs()).sum();
    let eig = sym.symmetric_eigenvalues();
    eig.iter().all(|&l| l >= -PSD_TRACE_TOL * trace)
}

/// `P A P^T = L D L^T` with diagonal (symmetric) pivoting.
///
/// Factorisation stops at the first pivot that is not above the singularity
/// threshold; `rank` records how many pivots were accepted.
#[derive(Debug, Clone)]
pub struct PivotedLdl {
    l: DMatrix<f64>,
    d: Vec<f64>,
    perm: Vec<usize>,
    rank: usize,
}

impl PivotedLdl {
    pub fn new(a: &DMatrix<f64>) -> Self {
        let n = a.nrows();
        let mut work = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut l = DMatrix::<f64>::identity(n, n);
        let mut d = Vec::with_capacity(n);
        let max_diag = (0..n).map(|i| a[(i, i)]).fold(0.0_f64, f64::max);
        let threshold = LDL_SINGULAR_TOL * n.max(1) as f64 * max_diag;
        let mut rank = 0;
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| work[(i, i)].total_cmp(&work[(j, j)]))
                .unwrap_or(k);
            if p != k {
                work.swap_rows(k, p);
                work.swap_columns(k, p);
                perm.swap(k, p);
                for c in 0..k {
                    l.swap((k, c), (p, c));
                }
            }
            let pivot = work[(k, k)];
            if pivot.is_nan() || pivot <= threshold {
                break;
            }
            d.push(pivot);
            rank += 1;
            for i in k + 1..n {
                l[(i, k)] = work[(i, k)] / pivot;
            }
            for i in k + 1..n {
                for j in k + 1..=i {
                    let v = work[(i, j)] - l[(i, k)] * l[(j, k)] * pivot;
                    work[(i, j)] = v;
                    work[(j, i)] = v;
                }
            }
        }
        PivotedLdl { l, d, perm, rank }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank == self.perm.len()
    }

    /// `ln det`, or `None` when the matrix is numerically singular.
    pub fn log_det(&self) -> Option<f64> {
        self.is_full_rank().then(|| self.d.iter().map(|p| p.ln()).sum())
    }

    /// Solves `A x = b`; only valid when the factorisation is full rank.
    pub fn solve(&self, b: &DVector<f64>) -> Option<DVector<f64>> {
        if !self.is_full_rank() {
            return None;
        }
        let n = self.perm.len();
        let mut y = DVector::from_iterator(n, self.perm.iter().map(|&p| b[p]));
        for i in 0..n {
            let s: f64 = (0..i).map(|j| self.l[(i, j)] * y[j]).sum();
            y[i] -= s;
        }
        for i in 0..n {
            y[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| self.l[(j, i)] * y[j]).sum();
            y[i] -= s;
        }
        let mut x = DVector::zeros(n);
        for (k, &p) in self.perm.iter().enumerate() {
            x[p] = y[k];
        }
        Some(x)
    }
}

/// `det(k1)/det(k2) - 1` through log-determinants.
///
/// A singular `k2` yields [`Snr::Infinite`]; a singular `k1` with a regular
/// `k2` is impossible for a valid pair and is reported as a domain error.
pub fn snr_from_cov(cov: &CovariancePair) -> Result<Snr> {
    let n = cov.k1.nrows();
    if cov.k1.shape() != (n, n) || cov.k2.shape() != (n, n) {
        return Err(Error::Domain("covariance pair must be square and equal sized".into()));
    }
    if n == 0 {
        return Ok(Snr::Finite(0.0));
    }
    let Some(ld2) = PivotedLdl::new(&cov.k2).log_det() else {
        return Ok(Snr::Infinite);
    };
    let Some(ld1) = PivotedLdl::new(&cov.k1).log_det() else {
        return Err(Error::Domain("k1 singular while k2 is regular".into()));
    };
    Ok(Snr::Finite((ld1 - ld2).exp_m1().max(0.0)))
}

/// Optimal linear weights `w` with `k1 w = cross`.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub w: DVector<f64>,
    /// Set when `k1` was singular and the minimum-norm solution was returned.
    pub degenerate: bool,
}

pub fn lmmse_weights(k1: &DMatrix<f64>, cross: &DVector<f64>) -> Result<Weights> {
    let n = k1.nrows();
    if k1.ncols() != n || cross.len() != n {
        return Err(Error::Domain("lmmse_weights: dimension mismatch".into()));
    }
    if let Some(w) = PivotedLdl::new(k1).solve(cross) {
        return Ok(Weights { w, degenerate: false });
    }
    let svd = k1.clone().svd(true, true);
    let tol = SVD_RANK_TOL * svd.singular_values.max();
    let w = svd.solve(cross, tol).map_err(|e| Error::Internal(e.to_string()))?;
    Ok(Weights { w, degenerate: true })
}

/// `signal_power / (1 + snr)`, zero for an infinite SNR.
pub fn mse_from_snr(signal_power: f64, snr: Snr) -> f64 {
    match snr {
        Snr::Infinite => 0.0,
        Snr::Finite(s) => signal_power / (1.0 + s),
    }
}

/// Observation model `K1 = power * s s^T + F F^T`, `K2 = F F^T`.
///
/// Row `i` of `f` holds the coefficients of observation `i` on a family of
/// uncorrelated unit-variance noise variables; `s` holds its coefficient on
/// the signal, whose second moment is `power`.
#[derive(Debug, Clone)]
pub struct FactoredModel {
    f: DMatrix<f64>,
    s: DVector<f64>,
    power: f64,
    basis: DMatrix<f64>,
    sing: Vec<f64>,
    /// Component of `s` outside the range of `f`.
    residual: DVector<f64>,
    infinite: bool,
}

impl FactoredModel {
    pub fn new(f: DMatrix<f64>, s: DVector<f64>, power: f64) -> Result<Self> {
        let n = s.len();
        if f.nrows() != n {
            return Err(Error::Domain("factor rows must match the signal length".into()));
        }
        if !(power.is_finite() && power > 0.0) {
            return Err(Error::Domain(format!("signal power must be positive, got {power}")));
        }
        let (basis, sing) = range_basis(&f);
        let proj = &basis * (basis.transpose() * &s);
        let residual = &s - proj;
        let infinite = residual.norm() > RANGE_RESIDUAL_TOL * s.norm();
        Ok(FactoredModel { f, s, power, basis, sing, residual, infinite })
    }

    pub fn dim(&self) -> usize {
        self.s.len()
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn signal(&self) -> &DVector<f64> {
        &self.s
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    /// `K2^+ s` restricted to the range of `F`.
    fn k2_pinv_s(&self) -> DVector<f64> {
        let coeffs = self.basis.transpose() * &self.s;
        let scaled = DVector::from_iterator(
            coeffs.len(),
            coeffs.iter().zip(&self.sing).map(|(c, sv)| c / (sv * sv)),
        );
        &self.basis * scaled
    }

    pub fn snr(&self) -> Snr {
        if self.infinite {
            return Snr::Infinite;
        }
        let coeffs = self.basis.transpose() * &self.s;
        let q: f64 = coeffs.iter().zip(&self.sing).map(|(c, sv)| (c / sv).powi(2)).sum();
        Snr::Finite(self.power * q)
    }

    pub fn mse(&self) -> f64 {
        mse_from_snr(self.power, self.snr())
    }

    /// Optimal linear weights; for an infinite SNR the minimum-norm weights
    /// that cancel all noise and keep the signal with unit gain.
    pub fn weights(&self) -> DVector<f64> {
        if self.infinite {
            let r2 = self.residual.norm_squared();
            return &self.residual / r2;
        }
        let z = self.k2_pinv_s();
        let snr = self.snr().value();
        z * (self.power / (1.0 + snr))
    }

    /// Exact MSE of an arbitrary weight vector, `|F^T d|^2 + power (s^T d - 1)^2`.
    pub fn mse_of(&self, d: &DVector<f64>) -> f64 {
        let noise = (self.f.transpose() * d).norm_squared();
        let bias = self.s.dot(d) - 1.0;
        noise + self.power * bias * bias
    }

    pub fn to_cov(&self) -> CovariancePair {
        let k2 = &self.f * self.f.transpose();
        let k1 = &k2 + (&self.s * self.s.transpose()) * self.power;
        CovariancePair { k1, k2 }
    }
}

/// Orthonormal basis of the column space of `f` and the matching singular
/// values, dropping directions below the rank tolerance.
fn range_basis(f: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let n = f.nrows();
    if f.ncols() == 0 || f.amax() == 0.0 {
        return (DMatrix::zeros(n, 0), Vec::new());
    }
    let svd = f.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > SVD_RANK_TOL * smax)
        .collect();
    let basis = DMatrix::from_fn(n, keep.len(), |r, c| u[(r, keep[c])]);
    let sing = keep.iter().map(|&i| svd.singular_values[i]).collect();
    (basis, sing)
}

/// Orthonormal basis of the span of the columns of `m` (rank-revealing).
pub fn orthonormal_span(m: &DMatrix<f64>) -> DMatrix<f64> {
    range_basis(m).0
}
