//! Benchmarks for the exploration, transport and metric engines; run them
//! with `cargo bench -p pccps-bench`.
