//! Benchmarks for the simulator live under `benches/`; run `cargo bench -p hybrid-aim-bench`.
