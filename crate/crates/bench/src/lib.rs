//! Criterion benchmarks for the hot kernels of `stochwave-core`; see
//! `benches/kernels.rs`.
