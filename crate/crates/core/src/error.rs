use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("value out of range: {name} = {value} ({reason})")]
    OutOfRange {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("field size mismatch: {what} has {got} entries, expected {expected}")]
    SizeMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("singular system in {0}")]
    Singular(&'static str),

    #[error("{solver} did not converge after {iterations} iterations (last update {last_update:.3e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        last_update: f64,
        history: Vec<f64>,
    },

    #[error("non-positive concentration {value:.4e} in cell {cell}")]
    Positivity { cell: usize, value: f64 },

    #[error("optimization iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
