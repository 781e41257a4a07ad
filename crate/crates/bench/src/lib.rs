//! Criterion benchmarks for `dpsecmul-core`; see `benches/`.
