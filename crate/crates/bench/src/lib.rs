//! Criterion benchmarks for the GHQ kernels live under `benches/`.
