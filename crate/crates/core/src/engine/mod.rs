//! Deterministic two-player micro-RTS grid engine.
//!
//! Units act through durative orders: an order occupies its unit for a fixed
//! number of ticks and its effect lands on the last one. Illegal orders are
//! replaced by NOOP and counted; conflicting legal orders issued in the same
//! tick are resolved in favour of the lower unit id.

mod map;
mod mask;
mod observe;
mod replay;
mod rules;
mod state;
mod types;

pub use map::{MapSpec, UnitPlacement, BASES_WORKERS_16X16, BASES_WORKERS_8X8};
pub use mask::{legality_mask, unit_mask_row, LegalityMask};
pub use observe::{observe, ObservationTensor, FEATURES, GROUP_OFFSETS, GROUP_WIDTHS};
pub use replay::{Replay, ReplayHeader, ReplayRecord, ReplayWriter};
pub use rules::{RewardWeights, Rules, UnitStats};
pub use state::{GridState, StepOutcome, DEFAULT_STEP_LIMIT};
pub use types::*;

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("invalid map spec: {0}")]
    Map(String),
    #[error("unknown map `{0}`")]
    UnknownMap(String),
    #[error("invalid unit-stats config: {0}")]
    Config(String),
    #[error("malformed action: {0}")]
    MalformedAction(String),
    #[error("game is already over")]
    GameOver,
    #[error("replay: {0}")]
    Replay(String),
}
