use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("action activates {active} chargers but the limit is {limit}")]
    CapacityViolation { active: usize, limit: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("not indexable: advantage turns negative again after being nonnegative (slope {slope} from {at})")]
    NotMonotone { slope: f64, at: f64 },

    #[error("optimal action does not flip on [{lo}, {hi}]; input is not indexable")]
    BracketFailure { lo: f64, hi: f64 },

    #[error("instance too large for brute force: {states} joint states")]
    TooLarge { states: usize },

    #[error("degenerate price trace: {0}")]
    DegenerateTrace(String),

    #[error("linear program failed: {0}")]
    Lp(String),

    #[error("unknown policy `{0}`")]
    UnknownPolicy(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
