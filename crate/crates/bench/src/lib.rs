//! Criterion benchmarks for `normlex-core`; see `benches/normlex.rs`.
