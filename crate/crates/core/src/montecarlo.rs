//! Seeded end-to-end simulation of a code.
//!
//! Work is split into `workers` blocks. Block `w` draws from
//! [`substream`]`(seed, w)`: a ChaCha8 generator keyed by `seed` on stream
//! `w`. Blocks are merged in index order, so a run is a pure function of
//! `(seed, workers, n)` regardless of thread scheduling.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::NoiseSpec;
use crate::error::{Error, Result};
use crate::schemes::{LinearCode, Side};

pub const MIN_SAMPLES: usize = 1000;

/// Zero-mean law of the data, with second moment `eta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataLaw {
    Gaussian { eta: f64 },
    Rademacher { eta: f64 },
    Uniform { eta: f64 },
}

impl DataLaw {
    pub fn eta(&self) -> f64 {
        match *self {
            DataLaw::Gaussian { eta } | DataLaw::Rademacher { eta } | DataLaw::Uniform { eta } => eta,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            DataLaw::Gaussian { eta } => {
                let z: f64 = rng.sample(StandardNormal);
                eta.sqrt() * z
            }
            DataLaw::Rademacher { eta } => {
                if rng.random::<bool>() { eta.sqrt() } else { -eta.sqrt() }
            }
            DataLaw::Uniform { eta } => (3.0 * eta).sqrt() * (2.0 * rng.random::<f64>() - 1.0),
        }
    }

    fn validate(&self) -> Result<()> {
        let eta = self.eta();
        if eta.is_finite() && eta > 0.0 {
            Ok(())
        } else {
            Err(Error::Domain(format!("data law needs positive eta, got {eta}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub seed: u64,
    pub workers: usize,
}

impl SimConfig {
    pub fn new(n: usize, seed: u64, workers: usize) -> Self {
        SimConfig { n, seed, workers }
    }

    fn check(&self) -> Result<()> {
        if self.n < MIN_SAMPLES {
            return Err(Error::Precondition(format!("need at least {MIN_SAMPLES} samples")));
        }
        if self.workers == 0 {
            return Err(Error::Precondition("need at least one worker".into()));
        }
        Ok(())
    }

    /// Sample count of block `w`: the first `n % workers` blocks get one more.
    fn share(&self, w: usize) -> usize {
        self.n / self.workers + usize::from(w < self.n % self.workers)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub mse: f64,
    pub stderr: f64,
    pub n_samples: u64,
    pub seed: u64,
}

/// Single-pass mean and variance (Welford), mergeable across blocks.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, o: &Moments) {
        if o.n == 0 {
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * o.n as f64 / n as f64;
        self.m2 += o.m2 + d * d * self.n as f64 * o.n as f64 / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 { 0.0 } else { self.m2 / (self.n - 1) as f64 }
    }

    pub fn stderr(&self) -> f64 {
        if self.n == 0 { 0.0 } else { (self.variance() / self.n as f64).sqrt() }
    }

    pub fn to_result(&self, seed: u64) -> SimResult {
        SimResult { mse: self.mean, stderr: self.stderr(), n_samples: self.n, seed }
    }
}

/// The documented split function: generator for block `stream` of `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs `f(rng, count, block)` for every block in parallel and returns the
/// outputs in block order. `stream_of` maps a block index to its stream id.
pub(crate) fn run_blocks<T: Send>(
    cfg: &SimConfig,
    stream_of: impl Fn(usize) -> u64 + Sync,
    f: impl Fn(&mut ChaCha8Rng, usize, usize) -> T + Sync,
) -> Vec<T> {
    (0..cfg.workers)
        .into_par_iter()
        .map(|w| {
            let mut rng = substream(cfg.seed, stream_of(w));
            f(&mut rng, cfg.share(w), w)
        })
        .collect()
}

pub(crate) fn merge_all(parts: &[Moments]) -> Moments {
    parts.iter().fold(Moments::default(), |mut acc, m| {
        acc.merge(m);
        acc
    })
}

/// Draws node shares for one side of a code.
#[derive(Debug, Clone)]
pub(crate) struct ShareSampler {
    rows: DMatrix<f64>,
    specs: Vec<NoiseSpec>,
    noise: Vec<f64>,
}

impl ShareSampler {
    pub(crate) fn new(code: &LinearCode, side: Side) -> Self {
        let specs = code.noise_specs(side).to_vec();
        ShareSampler { rows: code.rows(side).clone(), noise: vec![0.0; specs.len()], specs }
    }

    /// Fills `out[i]` with node `i`'s share of `data` under fresh noise.
    pub(crate) fn draw<R: Rng + ?Sized>(&mut self, data: f64, rng: &mut R, out: &mut [f64]) {
        for (z, spec) in self.noise.iter_mut().zip(&self.specs) {
            *z = spec.sample(rng);
        }
        for (i, o) in out.iter_mut().enumerate() {
            let mut s = self.rows[(i, 0)] * data;
            for (k, z) in self.noise.iter().enumerate() {
                s += self.rows[(i, k + 1)] * z;
            }
            *o = s;
        }
    }
}

/// Empirical MSE of `decoder` applied to the node products.
pub fn simulate_lmse(
    code: &LinearCode,
    decoder: &[f64],
    law: DataLaw,
    cfg: SimConfig,
) -> Result<SimResult> {
    cfg.check()?;
    law.validate()?;
    let n = code.n_nodes();
    if decoder.len() != n {
        return Err(Error::Domain("decoder length must equal the node count".into()));
    }
    let parts = run_blocks(&cfg, |w| w as u64, |rng, count, _| {
        let mut sa = ShareSampler::new(code, Side::A);
        let mut sb = ShareSampler::new(code, Side::B);
        let (mut ga, mut gb) = (vec![0.0; n], vec![0.0; n]);
        let mut m = Moments::default();
        for _ in 0..count {
            let a = law.sample(rng);
            let b = law.sample(rng);
            sa.draw(a, rng, &mut ga);
            sb.draw(b, rng, &mut gb);
            let est: f64 = (0..n).map(|i| decoder[i] * (ga[i] * gb[i])).sum();
            let err = a * b - est;
            m.push(err * err);
        }
        m
    });
    Ok(merge_all(&parts).to_result(cfg.seed))
}

/// Fits the best linear estimate of one input from a subset's shares on the
/// first half of the samples and reports its MSE on the second half.
///
/// Fitting uses streams `2w`, evaluation streams `2w + 1`.
pub fn simulate_adversary(
    code: &LinearCode,
    subset: &[usize],
    side: Side,
    law: DataLaw,
    cfg: SimConfig,
) -> Result<SimResult> {
    cfg.check()?;
    law.validate()?;
    if let Some(&bad) = subset.iter().find(|&&i| i >= code.n_nodes()) {
        return Err(Error::Domain(format!("node {bad} out of range")));
    }
    let k = subset.len();
    let n = code.n_nodes();
    let fit_cfg = SimConfig { n: cfg.n / 2, ..cfg };
    let eval_cfg = SimConfig { n: cfg.n - cfg.n / 2, ..cfg };

    let gram_parts = run_blocks(&fit_cfg, |w| 2 * w as u64, |rng, count, _| {
        let mut sampler = ShareSampler::new(code, side);
        let mut shares = vec![0.0; n];
        let mut xtx = DMatrix::<f64>::zeros(k, k);
        let mut xty = DVector::<f64>::zeros(k);
        for _ in 0..count {
            let data = law.sample(rng);
            sampler.draw(data, rng, &mut shares);
            for (r, &i) in subset.iter().enumerate() {
                xty[r] += shares[i] * data;
                for (c, &j) in subset.iter().enumerate() {
                    xtx[(r, c)] += shares[i] * shares[j];
                }
            }
        }
        (xtx, xty)
    });
    let (mut xtx, mut xty) = (DMatrix::zeros(k, k), DVector::zeros(k));
    for (g, c) in &gram_parts {
        xtx += g;
        xty += c;
    }
    let coef = if k == 0 {
        DVector::zeros(0)
    } else {
        let svd = xtx.svd(true, true);
        let tol = 1e-12 * svd.singular_values.max();
        svd.solve(&xty, tol).map_err(|e| Error::Internal(e.to_string()))?
    };

    let parts = run_blocks(&eval_cfg, |w| 2 * w as u64 + 1, |rng, count, _| {
        let mut sampler = ShareSampler::new(code, side);
        let mut shares = vec![0.0; n];
        let mut m = Moments::default();
        for _ in 0..count {
            let data = law.sample(rng);
            sampler.draw(data, rng, &mut shares);
            let est: f64 = subset.iter().zip(coef.iter()).map(|(&i, c)| c * shares[i]).sum();
            let err = data - est;
            m.push(err * err);
        }
        m
    });
    Ok(merge_all(&parts).to_result(cfg.seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_merge_matches_single_pass() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut whole = Moments::default();
        xs.iter().for_each(|&x| whole.push(x));
        let (mut a, mut b) = (Moments::default(), Moments::default());
        xs[..37].iter().for_each(|&x| a.push(x));
        xs[37..].iter().for_each(|&x| b.push(x));
        a.merge(&b);
        assert!((a.mean() - whole.mean()).abs() < 1e-14);
        assert!((a.variance() - whole.variance()).abs() < 1e-13);
    }

    #[test]
    fn shares_cover_all_samples() {
        let cfg = SimConfig::new(1003, 1, 4);
        let total: usize = (0..4).map(|w| cfg.share(w)).sum();
        assert_eq!(total, 1003);
    }

    #[test]
    fn substreams_differ() {
        let mut a = substream(9, 0);
        let mut b = substream(9, 1);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn too_few_samples_rejected() {
        let code = crate::schemes::build_iid_baseline(2, 1.0, 1.0).unwrap();
        let r = simulate_lmse(&code, &[0.5, 0.5], DataLaw::Gaussian { eta: 1.0 }, SimConfig::new(10, 0, 1));
        assert!(r.is_err());
    }

    #[test]
    fn law_second_moments() {
        let mut rng = substream(3, 0);
        for law in [DataLaw::Rademacher { eta: 2.0 }, DataLaw::Uniform { eta: 2.0 }] {
            let mut m = Moments::default();
            for _ in 0..200_000 {
                let x = law.sample(&mut rng);
                m.push(x * x);
            }
            assert!((m.mean() - 2.0).abs() < 4.0 * m.stderr() + 1e-12, "{law:?}");
        }
    }
}
