//! Criterion benchmarks for the `hidepet` hot paths. See `benches/core.rs`.
