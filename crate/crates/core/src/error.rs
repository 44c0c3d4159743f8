use thiserror::Error;

pub type Result<T> = std::result::Result<T, CtbnError>;

#[derive(Debug, Error)]
pub enum CtbnError {
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("unknown state `{state}` for variable `{variable}`")]
    UnknownState { variable: String, state: String },

    #[error("unknown parent instantiation {0}")]
    UnknownInstantiation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid data: {0}")]
    Invalid(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("joint state space has {states} states, above the cap of {cap}")]
    StateSpaceTooLarge { states: usize, cap: usize },

    #[error("intensity matrix is not variable-based: {0}")]
    NotVariableBased(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
