//! Gated-attention agents: a DDPG learner over a gated CNN with
//! Gumbel-Softmax heads, and an A3C trainer over a gated LSTM.

use thiserror::Error;

pub mod a3c;
pub mod ddpg;
pub mod nets;
pub mod policy;
pub mod replay;

pub use a3c::{compute_returns, A3cConfig, A3cProgress, A3cStats, A3cTrainer, Control, Trajectory};
pub use ddpg::{DdpgConfig, DdpgLearner, DdpgProgress, DdpgStats, DdpgTrainer};
pub use nets::{Fusion, FusionMode, GatedCnn, GatedCnnConfig, GatedLstm, GatedLstmConfig, LstmState};
pub use policy::ActMode;
pub use replay::{FrameStack, ReplayBuffer, Transition};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("update called with an empty batch")]
    EmptyBatch,
    #[error("update called with an empty trajectory")]
    EmptyTrajectory,
    #[error("invalid agent configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
    #[error(transparent)]
    Env(#[from] crate::env::EnvError),
}
