use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("too-coarse resolution: {feature} has {nodes} interior nodes across")]
    TooCoarse { feature: &'static str, nodes: usize },

    #[error("degenerate discretization: {0}")]
    Degenerate(String),

    #[error("no closed form distance for mask domains; use distance_field")]
    NoClosedForm,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("did not converge after {iterations} iterations (last residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("outer iteration did not converge after {iterations} iterations (last residual {residual:.3e})")]
    OuterNotConverged {
        iterations: usize,
        residual: f64,
        lambda_trace: Vec<f64>,
    },

    #[error("layer unresolved: {0}")]
    LayerUnresolved(String),

    #[error("no turning point: {0}")]
    TurningPoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
