use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("incompatible group width {group_width} for {width} channels")]
    IncompatibleGroup { width: u64, group_width: u64 },

    #[error("infeasible design space `{space}`: no valid sample for index {index} after {attempts} attempts")]
    Infeasible {
        space: String,
        index: u64,
        attempts: u64,
    },

    #[error("rank-deficient least-squares system ({rows} points, {cols} coefficients)")]
    RankDeficient { rows: usize, cols: usize },

    #[error("empty flop bin [{lo:.3e}, {hi:.3e})")]
    EmptyBin { lo: f64, hi: f64 },

    #[error("budget {budget} exceeds population size {size}")]
    BudgetTooLarge { budget: usize, size: usize },

    #[error("population format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
