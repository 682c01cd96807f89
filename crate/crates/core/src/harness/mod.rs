//! Fixed-seed evaluation, training drivers with checkpoints and CSV logs,
//! and throughput benchmarks.

use thiserror::Error;

pub mod bench;
pub mod eval;
pub mod train;

pub use bench::{bench, BenchReport};
pub use eval::{
    evaluate, run_random_baseline, EpisodeOutcome, EvalOptions, EvalReport, OraclePolicy, Policy, RandomPolicy,
};
pub use train::{load_model, train, Algorithm, Model, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] crate::env::EnvError),
    #[error(transparent)]
    Agent(#[from] crate::agents::AgentError),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
    #[error(transparent)]
    Gen(#[from] crate::procgen::GenError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// FNV-1a over the bytes of `s`, as 16 hex digits. Stable across builds.
pub fn stable_hash(s: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}
