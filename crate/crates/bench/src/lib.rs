//! Criterion benchmarks for the moderation hot paths; see `benches/`.
