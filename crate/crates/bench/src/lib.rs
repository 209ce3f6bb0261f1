//! Benchmarks for the maskwatch hot paths; see `benches/`.
