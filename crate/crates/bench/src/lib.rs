//! Cost model and wall-clock harness for pruned vs. baseline denoising.

pub mod flops;
pub mod harness;
pub mod report;

pub use flops::{predict_speedup, FlopModel};
pub use harness::{run_benchmark, Precision, SuiteConfig};
pub use report::{BenchReport, BenchRow};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Core(#[from] lifp_core::Error),
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
    #[error("invalid suite: {0}")]
    Config(String),
    #[error("outputs changed between repeats at redundancy {0}")]
    Nondeterministic(f64),
}
