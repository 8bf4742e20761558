//! Classification reports, confusion matrices and the batch-1 latency
//! benchmark.

pub mod bench;
pub mod render;
pub mod report;

pub use bench::{benchmark_fn, benchmark_fps, BenchResult};
pub use render::{render_bench, render_report, Format};
pub use report::{evaluate, evaluate_parallel, EvalReport};
