//! Benchmarks for the simulator live in `benches/`; this crate has no API.
