//! Criterion benchmarks for tracelab; see `benches/`.
