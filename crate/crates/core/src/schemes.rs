//! Linear codes and their constructors.
//!
//! Node `i` receives `Ã_i = v_i · [A, R_1..R_m]` and `B̃_i = w_i · [B, S_1..S_m']`
//! and returns the product `C̃_i = Ã_i B̃_i`. The `R` and `S` families are
//! independent of each other and of the data.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::distributions::{NoiseSpec, epsilon_from_variance};
use crate::error::{Error, Result, domain};
use crate::estimation::{FactoredModel, Snr};

/// Which of the two multiplicands a quantity refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

/// Smallest singular value required by the mixing-matrix conditions.
pub const MIN_SINGULAR_VALUE: f64 = 1e-8;
const DEFAULT_G_RETRIES: u64 = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SchemeDoc", into = "SchemeDoc")]
pub struct LinearCode {
    n_nodes: usize,
    eta: f64,
    a: Vec<f64>,
    b: Vec<f64>,
    v: DMatrix<f64>,
    w: DMatrix<f64>,
    noise_a: Vec<NoiseSpec>,
    noise_b: Vec<NoiseSpec>,
}

/// On-disk form of a code: row-major matrices and explicit data coefficients.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemeDoc {
    n_nodes: usize,
    eta: f64,
    a: Vec<f64>,
    b: Vec<f64>,
    v: Vec<Vec<f64>>,
    w: Vec<Vec<f64>>,
    noise_specs_a: Vec<NoiseSpec>,
    noise_specs_b: Vec<NoiseSpec>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], cols: usize, what: &str) -> Result<DMatrix<f64>> {
    if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
        return Err(Error::Construction(format!(
            "{what}: row {bad} has {} entries, expected {cols}",
            rows[bad].len()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

impl TryFrom<SchemeDoc> for LinearCode {
    type Error = Error;

    fn try_from(doc: SchemeDoc) -> Result<Self> {
        let v = matrix_from_rows(&doc.v, 1 + doc.noise_specs_a.len(), "v")?;
        let w = matrix_from_rows(&doc.w, 1 + doc.noise_specs_b.len(), "w")?;
        if doc.v.len() != doc.n_nodes || doc.w.len() != doc.n_nodes {
            return Err(Error::Construction("v and w must have n_nodes rows".into()));
        }
        let code = LinearCode::new(v, w, doc.noise_specs_a, doc.noise_specs_b, doc.eta)?;
        if code.a != doc.a || code.b != doc.b {
            return Err(Error::Construction(
                "a and b must equal the first columns of v and w".into(),
            ));
        }
        Ok(code)
    }
}

impl From<LinearCode> for SchemeDoc {
    fn from(c: LinearCode) -> Self {
        SchemeDoc {
            n_nodes: c.n_nodes,
            eta: c.eta,
            v: rows_of(&c.v),
            w: rows_of(&c.w),
            a: c.a,
            b: c.b,
            noise_specs_a: c.noise_a,
            noise_specs_b: c.noise_b,
        }
    }
}

impl LinearCode {
    /// Builds a code from its two coefficient matrices. Column 0 of `v` and
    /// `w` holds the data coefficients; column `k` multiplies noise `k-1`.
    pub fn new(
        v: DMatrix<f64>,
        w: DMatrix<f64>,
        noise_a: Vec<NoiseSpec>,
        noise_b: Vec<NoiseSpec>,
        eta: f64,
    ) -> Result<Self> {
        let n = v.nrows();
        if n == 0 || w.nrows() != n {
            return Err(Error::Construction("v and w need the same positive row count".into()));
        }
        if v.ncols() != 1 + noise_a.len() || w.ncols() != 1 + noise_b.len() {
            return Err(Error::Construction("matrix widths must be 1 + number of noises".into()));
        }
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::Construction(format!("eta must be positive, got {eta}")));
        }
        if v.iter().chain(w.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Construction("code coefficients must be finite".into()));
        }
        for spec in noise_a.iter().chain(&noise_b) {
            spec.validate()?;
        }
        Ok(LinearCode {
            n_nodes: n,
            eta,
            a: v.column(0).iter().copied().collect(),
            b: w.column(0).iter().copied().collect(),
            v,
            w,
            noise_a,
            noise_b,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn a_coeffs(&self) -> &[f64] {
        &self.a
    }

    pub fn b_coeffs(&self) -> &[f64] {
        &self.b
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn rows(&self, side: Side) -> &DMatrix<f64> {
        match side {
            Side::A => &self.v,
            Side::B => &self.w,
        }
    }

    pub fn noise_specs(&self, side: Side) -> &[NoiseSpec] {
        match side {
            Side::A => &self.noise_a,
            Side::B => &self.noise_b,
        }
    }

    pub fn data_coeffs(&self, side: Side) -> &[f64] {
        match side {
            Side::A => &self.a,
            Side::B => &self.b,
        }
    }

    /// Copy of the code with every noise spec replaced by `f(spec)`.
    pub fn map_noise(&self, f: impl Fn(&NoiseSpec) -> NoiseSpec) -> Result<Self> {
        LinearCode::new(
            self.v.clone(),
            self.w.clone(),
            self.noise_a.iter().map(&f).collect(),
            self.noise_b.iter().map(&f).collect(),
            self.eta,
        )
    }

    /// Noise coefficients of the given nodes scaled by the noise standard
    /// deviations, so the rows are coordinates on unit-variance noises.
    pub fn noise_factor(&self, side: Side, nodes: &[usize]) -> DMatrix<f64> {
        let rows = self.rows(side);
        let specs = self.noise_specs(side);
        DMatrix::from_fn(nodes.len(), specs.len(), |r, k| {
            rows[(nodes[r], k + 1)] * specs[k].std_dev()
        })
    }

    /// Rows in coordinates where data and every noise have unit variance:
    /// `[a_i sqrt(eta), v_ik sigma_k]`.
    pub fn normalized_rows(&self, side: Side) -> DMatrix<f64> {
        let rows = self.rows(side);
        let specs = self.noise_specs(side);
        let root_eta = self.eta.sqrt();
        DMatrix::from_fn(self.n_nodes, rows.ncols(), |i, k| {
            if k == 0 { rows[(i, 0)] * root_eta } else { rows[(i, k)] * specs[k - 1].std_dev() }
        })
    }

    /// `E[X̃_i X̃_j]` for the shares of one side.
    pub fn gram(&self, side: Side) -> DMatrix<f64> {
        let r = self.normalized_rows(side);
        &r * r.transpose()
    }

    /// Noise-only part of [`LinearCode::gram`].
    pub fn noise_gram(&self, side: Side) -> DMatrix<f64> {
        let all: Vec<usize> = (0..self.n_nodes).collect();
        let f = self.noise_factor(side, &all);
        &f * f.transpose()
    }

    /// What colluding `nodes` learn about one input: the signal enters with
    /// the data coefficients and power `eta`.
    pub fn subset_model(&self, side: Side, nodes: &[usize]) -> Result<FactoredModel> {
        let coeffs = self.data_coeffs(side);
        let s = DVector::from_iterator(nodes.len(), nodes.iter().map(|&i| coeffs[i]));
        FactoredModel::new(self.noise_factor(side, nodes), s, self.eta)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("code serialises")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Parameters of the layered construction on `t + 1` nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredParams {
    pub t: usize,
    pub x: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    /// `(t-1) x t` mixing matrix; `None` selects [`default_g`].
    pub g: Option<DMatrix<f64>>,
}

/// How the noise coordinates of a layered code are distributed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseKind {
    /// Unit-variance Gaussians; second moments are all the analysis needs.
    UnitGaussianAnalysis,
    /// `R_1 = staircase(epsilon_star) / x`, remaining noises unit Laplace.
    DpStaircase { epsilon_star: f64 },
}

impl NoiseKind {
    /// The staircase variant with `epsilon_star` chosen so `x R_1` is the
    /// variance-`x^2` staircase, i.e. `R_1` has unit variance.
    pub fn dp_staircase_for(x: f64) -> Result<Self> {
        Ok(NoiseKind::DpStaircase { epsilon_star: epsilon_from_variance(x * x)? })
    }
}

impl LayeredParams {
    pub fn new(t: usize, x: f64, alpha1: f64, alpha2: f64) -> Self {
        LayeredParams { t, x, alpha1, alpha2, g: None }
    }

    pub fn with_g(mut self, g: DMatrix<f64>) -> Self {
        self.g = Some(g);
        self
    }

    /// The effective mixing matrix (empty for `t = 1`).
    pub fn g_matrix(&self) -> Result<DMatrix<f64>> {
        match (&self.g, self.t) {
            (_, 0) => Err(Error::Construction("t must be at least 1".into())),
            (_, 1) => Ok(DMatrix::zeros(0, 1)),
            (Some(g), _) => Ok(g.clone()),
            (None, t) => default_g(t),
        }
    }

    pub fn validate(&self) -> Result<DMatrix<f64>> {
        if self.t == 0 {
            return Err(Error::Construction("t must be at least 1".into()));
        }
        if !(self.x.is_finite() && self.x > 0.0) {
            return Err(Error::Construction(format!("x must be positive, got {}", self.x)));
        }
        for (name, a) in [("alpha1", self.alpha1), ("alpha2", self.alpha2)] {
            if !(a.is_finite() && a >= 0.0) {
                return Err(Error::Construction(format!("{name} must be non-negative, got {a}")));
            }
        }
        let g = self.g_matrix()?;
        if self.t >= 2 {
            check_mixing_matrix(&g, self.t)?;
        }
        Ok(g)
    }
}

/// Smallest singular values found by [`check_mixing_matrix`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixingCheck {
    /// Minimum over all `(t-1) x (t-1)` column-deleted submatrices.
    pub c1: f64,
    /// Of the `t x t` matrix with an all-ones first row on top of `g`.
    pub c2: f64,
}

fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    m.clone().singular_values().min()
}

/// Verifies both full-rank conditions on `g`, naming the first that fails.
pub fn check_mixing_matrix(g: &DMatrix<f64>, t: usize) -> Result<MixingCheck> {
    if t < 2 || g.shape() != (t - 1, t) {
        return Err(Error::Construction(format!(
            "mixing matrix must be {}x{t}, got {}x{}",
            t.saturating_sub(1),
            g.nrows(),
            g.ncols()
        )));
    }
    let mut c1 = f64::INFINITY;
    for drop in 0..t {
        let keep: Vec<usize> = (0..t).filter(|&c| c != drop).collect();
        let sub = g.select_columns(&keep);
        c1 = c1.min(min_singular_value(&sub));
    }
    if c1.is_nan() || c1 < MIN_SINGULAR_VALUE {
        return Err(Error::Construction(format!(
            "condition C1 violated: a (t-1)x(t-1) submatrix has singular value {c1:e}"
        )));
    }
    let c2 = min_singular_value(&ones_over(g));
    if c2.is_nan() || c2 < MIN_SINGULAR_VALUE {
        return Err(Error::Construction(format!(
            "condition C2 violated: [1; g] has singular value {c2:e}"
        )));
    }
    Ok(MixingCheck { c1, c2 })
}

/// `g` with a row of ones stacked on top.
pub(crate) fn ones_over(g: &DMatrix<f64>) -> DMatrix<f64> {
    let t = g.ncols();
    DMatrix::from_fn(g.nrows() + 1, t, |r, c| if r == 0 { 1.0 } else { g[(r - 1, c)] })
}

/// Deterministic mixing matrix: row `k` is `(1^k, 2^k, .., t^k)` scaled to
/// unit norm, `k = 1..t-1`. If that fails the rank checks (large `t`), seeded
/// Gaussian matrices are tried instead.
pub fn default_g(t: usize) -> Result<DMatrix<f64>> {
    if t < 2 {
        return Err(Error::Construction("default_g needs t >= 2".into()));
    }
    let mut g = DMatrix::from_fn(t - 1, t, |k, i| ((i + 1) as f64).powi(k as i32 + 1));
    normalize_rows(&mut g);
    if check_mixing_matrix(&g, t).is_ok() {
        return Ok(g);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x6d69_7869_6e67_0000 ^ t as u64);
    for _ in 0..DEFAULT_G_RETRIES {
        let mut g = DMatrix::from_fn(t - 1, t, |_, _| StandardNormal.sample(&mut rng));
        normalize_rows(&mut g);
        if check_mixing_matrix(&g, t).is_ok() {
            return Ok(g);
        }
    }
    Err(Error::Internal(format!("no admissible mixing matrix found for t={t}")))
}

fn normalize_rows(g: &mut DMatrix<f64>) {
    for mut row in g.row_iter_mut() {
        let n = row.norm();
        row /= n;
    }
}

/// The layered code on `t + 1` nodes.
///
/// Node `t+1` gets `[1, x, 0, .., 0]`; node `i <= t` gets
/// `[1, x + alpha1, alpha2 g_i]` where `g_i` is column `i` of the mixing
/// matrix. Both inputs use the same rows.
pub fn build_layered(params: &LayeredParams, kind: NoiseKind, eta: f64) -> Result<LinearCode> {
    let g = params.validate()?;
    let t = params.t;
    let n = t + 1;
    let v = DMatrix::from_fn(n, 1 + t, |i, k| match (i, k) {
        (_, 0) => 1.0,
        (i, 1) if i == t => params.x,
        (_, 1) => params.x + params.alpha1,
        (i, _) if i == t => 0.0,
        (i, k) => params.alpha2 * g[(k - 2, i)],
    });
    let specs: Vec<NoiseSpec> = match kind {
        NoiseKind::UnitGaussianAnalysis => vec![NoiseSpec::unit_gaussian(); t],
        NoiseKind::DpStaircase { epsilon_star } => {
            let mut s = vec![NoiseSpec::Staircase { epsilon: epsilon_star, scale: 1.0 / params.x }];
            s.extend(std::iter::repeat_n(NoiseSpec::unit_laplace(), t - 1));
            s
        }
    };
    LinearCode::new(v.clone(), v, specs.clone(), specs, eta)
}

/// Real-valued Shamir sharing: `Ã_i = A + sum_k x_i^k sigma R_k`, `k = 1..t`.
pub fn build_shamir_real(
    n_nodes: usize,
    t: usize,
    eval_points: &[f64],
    noise_variance: f64,
    eta: f64,
) -> Result<LinearCode> {
    if eval_points.len() != n_nodes || n_nodes == 0 {
        return Err(Error::Construction("need one evaluation point per node".into()));
    }
    if eval_points.iter().any(|&p| p == 0.0 || !p.is_finite()) {
        return Err(Error::Construction("evaluation points must be finite and nonzero".into()));
    }
    for (i, p) in eval_points.iter().enumerate() {
        if eval_points[..i].contains(p) {
            return Err(Error::Construction(format!("duplicate evaluation point {p}")));
        }
    }
    if !(noise_variance.is_finite() && noise_variance > 0.0) {
        return Err(Error::Construction("noise variance must be positive".into()));
    }
    let sigma = noise_variance.sqrt();
    let v = DMatrix::from_fn(n_nodes, 1 + t, |i, k| {
        if k == 0 { 1.0 } else { eval_points[i].powi(k as i32) * sigma }
    });
    let specs = vec![NoiseSpec::unit_gaussian(); t];
    LinearCode::new(v.clone(), v, specs.clone(), specs, eta)
}

/// Weights `d` with `sum_i d_i p(x_i) = p(0)` for every polynomial of degree
/// below the number of points.
pub fn lagrange_at_zero(points: &[f64]) -> Vec<f64> {
    (0..points.len())
        .map(|i| {
            points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &xj)| xj / (xj - points[i]))
                .product()
        })
        .collect()
}

/// Every node adds its own independent staircase noise to each input.
pub fn build_iid_baseline(n_nodes: usize, epsilon_per_node: f64, eta: f64) -> Result<LinearCode> {
    if !(epsilon_per_node.is_finite() && epsilon_per_node > 0.0) {
        return Err(Error::Construction("epsilon per node must be positive".into()));
    }
    let v = DMatrix::from_fn(n_nodes, 1 + n_nodes, |i, k| {
        if k == 0 || k == i + 1 { 1.0 } else { 0.0 }
    });
    let specs = vec![NoiseSpec::staircase(epsilon_per_node); n_nodes];
    LinearCode::new(v.clone(), v, specs.clone(), specs, eta)
}

/// Code number `index` of a reproducible random family with `N <= 2t`.
///
/// `t` cycles through `1..=t_max`; `N` is uniform on `[t, 2t]`, each side has
/// between one and `t + 1` Gaussian noises with log-normal variances, and
/// every coefficient is standard normal. Draws come from stream `index` of
/// `seed`, so codes do not depend on how many were generated before.
pub fn random_code(seed: u64, index: u64, t_max: usize, eta: f64) -> Result<(usize, LinearCode)> {
    if t_max == 0 {
        return Err(Error::Domain("t_max must be positive".into()));
    }
    let mut rng = crate::montecarlo::substream(seed, index);
    let t = 1 + (index % t_max as u64) as usize;
    let n = t + rng.random_range(0..=t);
    let side = |rng: &mut ChaCha8Rng| {
        let m = rng.random_range(1..=t + 1);
        let v = DMatrix::from_fn(n, 1 + m, |_, _| StandardNormal.sample(&mut *rng));
        let specs: Vec<NoiseSpec> = (0..m)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut *rng);
                NoiseSpec::Gaussian { variance: z.exp() }
            })
            .collect();
        (v, specs)
    };
    let (v, sa) = side(&mut rng);
    let (w, sb) = side(&mut rng);
    Ok((t, LinearCode::new(v, w, sa, sb, eta)?))
}

/// Evaluation points `exp(j pi (i-1) / 3)` of the three-node complex code.
fn baseline1_points() -> [Complex64; 3] {
    std::array::from_fn(|i| Complex64::from_polar(1.0, std::f64::consts::PI * i as f64 / 3.0))
}

/// `E[Ã_i conj(Ã_j)]` minus the data part, for the complex code with two
/// real noises of variance `sigma_n_sq`.
fn baseline1_noise_cov(i: usize, j: usize, sigma_n_sq: f64) -> Complex64 {
    let x = baseline1_points();
    let z = x[i] * x[j].conj();
    (z + z * z) * sigma_n_sq
}

/// Determinant of the Hermitian matrix `[[p, q], [conj q, r]]`.
fn hermitian_det2(p: f64, q: Complex64, r: f64) -> f64 {
    p * r - q.norm_sqr()
}

/// Largest SNR any two colluders reach about `A` in the complex code.
pub fn baseline1_pair_snr(sigma_n_sq: f64, eta: f64) -> Result<f64> {
    if !(sigma_n_sq.is_finite() && sigma_n_sq > 0.0) {
        return domain(format!("noise variance must be positive, got {sigma_n_sq}"));
    }
    let mut worst = 0.0_f64;
    for i in 0..3 {
        for j in i + 1..3 {
            let n_ii = baseline1_noise_cov(i, i, sigma_n_sq).re;
            let n_jj = baseline1_noise_cov(j, j, sigma_n_sq).re;
            let n_ij = baseline1_noise_cov(i, j, sigma_n_sq);
            let det2 = hermitian_det2(n_ii, n_ij, n_jj);
            let det1 = hermitian_det2(n_ii + eta, n_ij + eta, n_jj + eta);
            worst = worst.max(det1 / det2 - 1.0);
        }
    }
    Ok(worst)
}

/// Lower bound on the two-node DP parameter of the complex code: the
/// colluders' unbiased estimate of `A` carries noise of variance
/// `eta / SNR`, which no mechanism can make `epsilon`-DP below
/// `sigma_star_sq^{-1}` of that variance.
pub fn baseline1_epsilon_lower(sigma_n_sq: f64, eta: f64) -> Result<f64> {
    let snr = baseline1_pair_snr(sigma_n_sq, eta)?;
    epsilon_from_variance(eta / snr)
}

/// LMSE of estimating `AB` from the three complex node products.
///
/// The Hermitian covariances are mapped to their real `6 x 6` embedding
/// `[[Re, -Im], [Im, Re]]`, whose determinant is the square of the complex one.
pub fn baseline1_lmse(sigma_n_sq: f64, eta: f64) -> Result<f64> {
    if !(sigma_n_sq.is_finite() && sigma_n_sq > 0.0) {
        return domain(format!("noise variance must be positive, got {sigma_n_sq}"));
    }
    let gram = |i: usize, j: usize| baseline1_noise_cov(i, j, sigma_n_sq) + eta;
    let k1 = |i: usize, j: usize| gram(i, j) * gram(i, j);
    let k2 = |i: usize, j: usize| k1(i, j) - eta * eta;
    let embed = |h: &dyn Fn(usize, usize) -> Complex64| {
        DMatrix::from_fn(6, 6, |r, c| {
            let v = h(r % 3, c % 3);
            match (r < 3, c < 3) {
                (true, true) | (false, false) => v.re,
                (true, false) => -v.im,
                (false, true) => v.im,
            }
        })
    };
    let cov = crate::estimation::CovariancePair { k1: embed(&k1), k2: embed(&k2) };
    let snr = match crate::estimation::snr_from_cov(&cov)? {
        Snr::Infinite => return Ok(0.0),
        Snr::Finite(s) => (0.5 * s.ln_1p()).exp_m1(),
    };
    Ok(eta * eta / (1.0 + snr))
}
