//! Benchmarks for the control and learning hot paths. See `benches/`.
