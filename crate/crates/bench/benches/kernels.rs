use std::hint::black_box;

use criterion::{BenchmarkId, Criterion, criterion_group, criterion_main};
use dpsecmul_core::accuracy::{converse_check, snr_a};
use dpsecmul_core::montecarlo::{simulate_lmse, substream};
use dpsecmul_core::precision::{QuantizerConfig, quantize};
use dpsecmul_core::privacy::snr_p;
use dpsecmul_core::schemes::{build_layered, random_code};
use dpsecmul_core::{DataLaw, LayeredParams, NoiseKind, NoiseSpec, SimConfig};

fn layered(t: usize) -> dpsecmul_core::LinearCode {
    let a1: f64 = 1e-3;
    let p = LayeredParams::new(t, 1.0, a1, a1.powf(2.0 / 3.0));
    build_layered(&p, NoiseKind::UnitGaussianAnalysis, 1.0).unwrap()
}

fn closed_forms(c: &mut Criterion) {
    let mut g = c.benchmark_group("closed_form");
    for t in [2, 4, 6] {
        let code = layered(t);
        g.bench_with_input(BenchmarkId::new("snr_a", t), &code, |b, code| {
            b.iter(|| snr_a(black_box(code)).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("snr_p", t), &code, |b, code| {
            b.iter(|| snr_p(black_box(code), t).unwrap())
        });
    }
    let (t, code) = random_code(1, 3, 4, 1.0).unwrap();
    g.bench_function("converse_check_random_t4", |b| b.iter(|| converse_check(black_box(&code), t).unwrap()));
    g.finish();
}

fn sampling(c: &mut Criterion) {
    let spec = NoiseSpec::staircase(1.0);
    let mut rng = substream(7, 0);
    c.bench_function("staircase_sample", |b| b.iter(|| spec.sample(&mut rng)));

    let q = QuantizerConfig::new(16, 8.0).unwrap();
    let mut x = 0.1234;
    c.bench_function("quantize_16bit", |b| {
        b.iter(|| {
            x = -x;
            quantize(black_box(x), &q, 0.0)
        })
    });

    let code = layered(2);
    let w = snr_a(&code).unwrap().decoder_weights;
    c.bench_function("simulate_lmse_t2_100k", |b| {
        b.iter(|| simulate_lmse(&code, &w, DataLaw::Gaussian { eta: 1.0 }, SimConfig::new(100_000, 3, 1)).unwrap())
    });
}

criterion_group!(benches, closed_forms, sampling);
criterion_main!(benches);
