//! Benchmarks for the archforge core live in `benches/`.
