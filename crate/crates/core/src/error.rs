use thiserror::Error;

/// Errors raised across the design-optimization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("design {value} outside domain [{lo}, {hi}] at coordinate {index}")]
    Domain {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("parameter outside model support: {0}")]
    Support(String),

    #[error("model `{model}` does not support {operation}")]
    Unsupported {
        model: String,
        operation: &'static str,
    },

    #[error("sampler diagnostics: {0}")]
    Diagnostics(String),

    #[error("epoch {epoch}: {source}")]
    Epoch {
        epoch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("critic file: {0}")]
    CriticFormat(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
