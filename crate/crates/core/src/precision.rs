//! Finite-precision node inputs: dithered uniform quantisation and the
//! number of bits needed to stay within `delta` of the exact-arithmetic MSE.

use nalgebra::DMatrix;
use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};

use crate::accuracy::{decoder_mse, snr_a};
use crate::error::{Error, Result};
use crate::montecarlo::{DataLaw, Moments, ShareSampler, SimConfig, merge_all, run_blocks};
use crate::schemes::{
    LayeredParams, LinearCode, NoiseKind, Side, build_layered, build_shamir_real, lagrange_at_zero,
};

/// Quantiser covering `[-range, range]` with `2^bits` cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizerConfig {
    pub bits: u32,
    pub range: f64,
}

impl QuantizerConfig {
    pub fn new(bits: u32, range: f64) -> Result<Self> {
        if bits == 0 || bits > 60 || !(range.is_finite() && range > 0.0) {
            return Err(Error::Domain(format!("invalid quantizer: bits={bits}, range={range}")));
        }
        Ok(QuantizerConfig { bits, range })
    }

    pub fn step(&self) -> f64 {
        2.0 * self.range / 2f64.powi(self.bits as i32)
    }

    /// Dither uniform on `(-step/2, step/2]`.
    pub fn draw_dither<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.step() * (0.5 - rng.random::<f64>())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantized {
    pub value: f64,
    /// The input lay outside `[-range, range]` and the output was clipped.
    pub overload: bool,
}

/// Subtractive dither: `step * round((x + dither) / step) - dither`.
pub fn quantize(x: f64, cfg: &QuantizerConfig, dither: f64) -> Quantized {
    let step = cfg.step();
    let q = step * ((x + dither) / step).round() - dither;
    let overload = x.abs() > cfg.range;
    let value = if overload { q.clamp(-cfg.range, cfg.range) } else { q };
    Quantized { value, overload }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "t", rename_all = "snake_case")]
pub enum SchemeKind {
    Layered(usize),
    ShamirReal(usize),
}

impl SchemeKind {
    pub fn name(&self) -> &'static str {
        match self {
            SchemeKind::Layered(_) => "layered",
            SchemeKind::ShamirReal(_) => "shamir_real",
        }
    }

    pub fn t(&self) -> usize {
        match *self {
            SchemeKind::Layered(t) | SchemeKind::ShamirReal(t) => t,
        }
    }
}

/// Monte Carlo estimate of the MSE added by quantising every node input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcessEstimate {
    pub excess: f64,
    pub excess_stderr: f64,
    /// Empirical MSE of the quantised pipeline.
    pub mse: f64,
    pub mse_stderr: f64,
    pub overload_rate: f64,
    /// Dynamic range used, in predicted standard deviations of each share.
    pub range_stds: f64,
}

const OVERLOAD_LIMIT: f64 = 1e-4;
const DEFAULT_RANGE_STDS: f64 = 8.0;

/// Quantises `Ã_i`, `B̃_i` with `bits` bits over `range_stds` predicted
/// standard deviations and measures the excess over exact arithmetic on
/// common random numbers: the mean of `err_q^2 - err^2`.
///
/// If more than `1e-4` of the inputs overload, the range is doubled and
/// the run repeated.
pub fn quantized_excess(
    code: &LinearCode,
    decoder: &[f64],
    bits: u32,
    law: DataLaw,
    cfg: SimConfig,
) -> Result<ExcessEstimate> {
    let mut range_stds = DEFAULT_RANGE_STDS;
    for _ in 0..8 {
        let est = quantized_excess_at(code, decoder, bits, range_stds, law, cfg)?;
        if est.overload_rate <= OVERLOAD_LIMIT {
            return Ok(est);
        }
        range_stds *= 2.0;
    }
    Err(Error::Internal("quantizer overload persists after range growth".into()))
}

fn quantized_excess_at(
    code: &LinearCode,
    decoder: &[f64],
    bits: u32,
    range_stds: f64,
    law: DataLaw,
    cfg: SimConfig,
) -> Result<ExcessEstimate> {
    let n = code.n_nodes();
    if decoder.len() != n {
        return Err(Error::Domain("decoder length must equal the node count".into()));
    }
    let quantizers = |side: Side| -> Result<Vec<QuantizerConfig>> {
        let g: DMatrix<f64> = code.gram(side);
        let scale = law.eta() / code.eta();
        (0..n)
            .map(|i| {
                let data_part = code.data_coeffs(side)[i].powi(2) * code.eta();
                let var = g[(i, i)] + data_part * (scale - 1.0);
                QuantizerConfig::new(bits, range_stds * var.max(f64::MIN_POSITIVE).sqrt())
            })
            .collect()
    };
    let (qa, qb) = (quantizers(Side::A)?, quantizers(Side::B)?);
    let parts = run_blocks(&cfg, |w| w as u64, |rng, count, _| {
        let mut sa = ShareSampler::new(code, Side::A);
        let mut sb = ShareSampler::new(code, Side::B);
        let (mut ga, mut gb) = (vec![0.0; n], vec![0.0; n]);
        let (mut diff, mut total) = (Moments::default(), Moments::default());
        let mut overloads = 0u64;
        for _ in 0..count {
            let a = law.sample(rng);
            let b = law.sample(rng);
            sa.draw(a, rng, &mut ga);
            sb.draw(b, rng, &mut gb);
            let (mut exact, mut coarse) = (0.0, 0.0);
            for i in 0..n {
                let ya = quantize(ga[i], &qa[i], qa[i].draw_dither(rng));
                let yb = quantize(gb[i], &qb[i], qb[i].draw_dither(rng));
                overloads += u64::from(ya.overload) + u64::from(yb.overload);
                exact += decoder[i] * (ga[i] * gb[i]);
                coarse += decoder[i] * (ya.value * yb.value);
            }
            let (e0, e1) = (a * b - exact, a * b - coarse);
            diff.push(e1 * e1 - e0 * e0);
            total.push(e1 * e1);
        }
        (diff, total, overloads)
    });
    let diff = merge_all(&parts.iter().map(|p| p.0).collect::<Vec<_>>());
    let total = merge_all(&parts.iter().map(|p| p.1).collect::<Vec<_>>());
    let overloads: u64 = parts.iter().map(|p| p.2).sum();
    Ok(ExcessEstimate {
        excess: diff.mean(),
        excess_stderr: diff.stderr(),
        mse: total.mean(),
        mse_stderr: total.stderr(),
        overload_rate: overloads as f64 / (2 * n) as f64 / cfg.n as f64,
        range_stds,
    })
}

/// Sample-size and search settings of [`precision_sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    /// Samples per check are `max(min_samples, samples_per_inv_delta / delta)`.
    pub min_samples: usize,
    pub samples_per_inv_delta: f64,
    pub workers: usize,
    pub max_bits: u32,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions { min_samples: 200_000, samples_per_inv_delta: 200.0, workers: 4, max_bits: 52 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionPoint {
    pub delta: f64,
    pub min_bits: u32,
    pub overload_rate: f64,
    /// Exact-arithmetic MSE of the decoder plus the estimated excess.
    pub mse: f64,
    pub stderr: f64,
    /// `alpha1` chosen for this `delta` (layered only).
    pub alpha1: Option<f64>,
}

/// A code, its decoder, the exact-arithmetic MSE of that decoder and the
/// MSE the quantised pipeline must not exceed.
#[derive(Debug, Clone)]
pub struct PrecisionSetup {
    pub code: LinearCode,
    pub decoder: Vec<f64>,
    pub exact_mse: f64,
    pub target: f64,
    pub alpha1: Option<f64>,
}

/// Limit LMSE of the layered codes as `alpha -> 0`: `eta^2 x^4 / (eta + x^2)^2`.
pub fn layered_limit_lmse(eta: f64, x: f64) -> f64 {
    let r = x * x / (eta + x * x);
    eta * eta * r * r
}

fn layered_code(t: usize, x: f64, alpha1: f64, eta: f64) -> Result<LinearCode> {
    let alpha2 = if t >= 2 { alpha1.powf(2.0 / 3.0) } else { 0.0 };
    build_layered(&LayeredParams::new(t, x, alpha1, alpha2), NoiseKind::UnitGaussianAnalysis, eta)
}

/// Builds the code for one `delta`.
///
/// Layered (`N = t+1`, `alpha2 = alpha1^{2/3}`): `alpha1` is tuned so the
/// exact-arithmetic LMSE exceeds its limit by `delta/2`, leaving `delta/2`
/// for quantisation; the target is limit + `delta`. Real Shamir (`N = 2t+1`,
/// points `1..N`, noise variance `x^2`) decodes exactly with Lagrange
/// weights; the target is `delta`.
pub fn precision_setup(kind: SchemeKind, delta: f64, eta: f64, x: f64) -> Result<PrecisionSetup> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::Domain(format!("delta must be positive, got {delta}")));
    }
    match kind {
        SchemeKind::ShamirReal(t) => {
            let n = 2 * t + 1;
            let points: Vec<f64> = (1..=n).map(|i| i as f64).collect();
            let code = build_shamir_real(n, t, &points, x * x, eta)?;
            let decoder = lagrange_at_zero(&points);
            let exact_mse = decoder_mse(&code, &decoder)?;
            Ok(PrecisionSetup { code, decoder, exact_mse, target: delta, alpha1: None })
        }
        SchemeKind::Layered(t) => {
            let limit = layered_limit_lmse(eta, x);
            let excess = |a1: f64| -> Result<f64> {
                Ok(snr_a(&layered_code(t, x, a1, eta)?)?.lmse - limit - delta / 2.0)
            };
            let (mut lo, mut hi) = (1e-12_f64.ln(), 1e3_f64.ln());
            if excess(hi.exp())? < 0.0 {
                lo = hi;
            } else {
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if excess(mid.exp())? < 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo < 1e-10 {
                        break;
                    }
                }
            }
            let alpha1 = lo.exp();
            let code = layered_code(t, x, alpha1, eta)?;
            let decoder = snr_a(&code)?.decoder_weights;
            let exact_mse = decoder_mse(&code, &decoder)?;
            Ok(PrecisionSetup { code, decoder, exact_mse, target: limit + delta, alpha1: Some(alpha1) })
        }
    }
}

/// For each `delta`, the least bit count whose quantised MSE stays below
/// the target with three-standard-error confidence.
pub fn precision_sweep(
    kind: SchemeKind,
    deltas: &[f64],
    eta: f64,
    x: f64,
    seed: u64,
    opts: SweepOptions,
) -> Result<Vec<PrecisionPoint>> {
    if deltas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Precondition("deltas must be strictly decreasing".into()));
    }
    let law = DataLaw::Gaussian { eta };
    let mut out = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let setup = precision_setup(kind, delta, eta, x)?;
        let n = opts.min_samples.max((opts.samples_per_inv_delta / delta).ceil() as usize);
        let cfg = SimConfig::new(n, seed, opts.workers);
        let check = |bits: u32| -> Result<(bool, ExcessEstimate)> {
            let est = quantized_excess(&setup.code, &setup.decoder, bits, law, cfg)?;
            let upper = setup.exact_mse + est.excess + 3.0 * est.excess_stderr;
            Ok((upper <= setup.target, est))
        };
        let (ok, mut best) = check(opts.max_bits)?;
        if !ok {
            return Err(Error::Internal(format!(
                "target for delta={delta} not met even with {} bits",
                opts.max_bits
            )));
        }
        let (mut lo, mut hi) = (0u32, opts.max_bits);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            let (ok, est) = check(mid)?;
            if ok {
                hi = mid;
                best = est;
            } else {
                lo = mid;
            }
        }
        out.push(PrecisionPoint {
            delta,
            min_bits: hi,
            overload_rate: best.overload_rate,
            mse: setup.exact_mse + best.excess,
            stderr: best.excess_stderr,
            alpha1: setup.alpha1,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub stderr: f64,
    pub intercept: f64,
}

/// Least-squares slope of bits against `log2(1/delta)`.
pub fn slope_estimate(curve: &[(f64, u32)]) -> Result<SlopeFit> {
    if curve.len() < 4 {
        return Err(Error::Precondition("slope needs at least four points".into()));
    }
    let (dmin, dmax) = curve
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &(d, _)| (lo.min(d), hi.max(d)));
    if !(dmin > 0.0 && dmax / dmin >= 1e3) {
        return Err(Error::Precondition("deltas must span three orders of magnitude".into()));
    }
    let xs: Vec<f64> = curve.iter().map(|&(d, _)| (1.0 / d).log2()).collect();
    let ys: Vec<f64> = curve.iter().map(|&(_, b)| b as f64).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let stderr = (rss / (n - 2.0) / sxx).sqrt();
    Ok(SlopeFit { slope, stderr, intercept })
}
