//! Criterion benchmarks for the dense kernels, SSIM and generator inference.
//! Run with `cargo bench -p dmcw-bench`.
