use thiserror::Error;

/// Errors produced by the simulation, learning and experiment layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("no configuration of {n} agents with minimum separation {min_separation} found after {rounds} rejection rounds")]
    InfeasibleSeparation {
        n: usize,
        min_separation: f64,
        rounds: usize,
    },

    #[error("point ({x}, {y}) lies outside the box [-{half_width}, {half_width}]^2")]
    OutOfBox { x: f64, y: f64, half_width: f64 },

    #[error("at least {required} agents required, got {got}")]
    TooFewAgents { required: usize, got: usize },

    #[error("agent index {index} out of range for {n} agents")]
    AgentIndex { index: usize, n: usize },

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("weights must be non-negative and sum to 1 (sum = {sum})")]
    Unnormalized { sum: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite loss in epoch {epoch}, minibatch {minibatch}: policy {policy_loss}, value {value_loss}, kl {kl}")]
    NonFiniteLoss {
        epoch: usize,
        minibatch: usize,
        policy_loss: f64,
        value_loss: f64,
        kl: f64,
    },

    #[error("open-loop sequence has {len} steps but the horizon is {horizon}")]
    SequenceTooShort { len: usize, horizon: usize },

    #[error("open-loop control requires a deterministic mean-field limit; {0} is stochastic")]
    StochasticLimit(String),

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("empty trajectory")]
    EmptyTrajectory,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
