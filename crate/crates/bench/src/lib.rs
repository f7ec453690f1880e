//! Benchmarks for `nchv-core`; see `benches/`.
