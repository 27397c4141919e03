//! Rollouts against the scripted opponent pool, the training loop,
//! evaluation tournaments and statistics export.

pub mod config;
pub mod eval;
pub mod metrics;
pub mod rollout;
pub mod train;

pub use config::{EmbeddingSetting, Hyperparameters, RunConfig};
pub use eval::{checkpoint_map, evaluate, load_policy, play_match, policy_from_checkpoint, verify_replay, EvalOptions, EvalReport, MatchSummary, OpponentRow};
pub use metrics::{export_stats, read_metrics, MetricsRecord, StatsSummary};
pub use rollout::{rollout, Agent, Env, EnvPool, EpisodeSummary, RolloutStats};
pub use train::{train, TrainOptions, TrainSummary};

use crate::engine::EngineError;
use crate::numerics::NumericsError;
use crate::policy::PolicyError;
use crate::ppo::PpoError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("agent order coerced to NOOP in env {env} at tick {tick} ({count} orders); the action mask admitted an illegal order")]
    AgentCoerced { env: usize, tick: u32, count: u32 },
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}
