//! Criterion benchmarks for the crossbar estimator; see `benches/`.
