//! Criterion benchmarks for the `bregproj` solvers live under `benches/`.
