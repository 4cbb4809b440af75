//! Criterion benchmarks for apeforge; see `benches/`.
