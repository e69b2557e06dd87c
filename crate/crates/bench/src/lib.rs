//! Criterion benchmarks for the model solvers; see `benches/solvers.rs`.
