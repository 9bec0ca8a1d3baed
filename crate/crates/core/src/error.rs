use thiserror::Error;

/// Errors surfaced by dataset generation, loss evaluation, and policy fitting.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("optimization diverged at iteration {iteration}: objective became non-finite")]
    Divergence { iteration: usize },

    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),
}

pub type Result<T> = std::result::Result<T, Error>;
