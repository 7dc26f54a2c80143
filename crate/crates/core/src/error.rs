use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("field is not admissible: {0}")]
    InvalidField(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("solver did not converge: {0}")]
    NoConvergence(String),
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
