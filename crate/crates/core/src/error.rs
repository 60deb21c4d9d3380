use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unsupported kernel: derivative order {order} along {axis}")]
    UnsupportedKernel { order: usize, axis: &'static str },

    #[error("non-finite wavefield at time step {step}")]
    Unstable { step: usize },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("reference has zero norm")]
    ZeroNorm,

    #[error("optimizer diverged during {phase} at iteration {iteration}")]
    Diverged {
        phase: &'static str,
        iteration: usize,
        /// Loss values recorded before the divergence.
        trace: Vec<f64>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag used by the CLI error document.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidGrid(_) => "invalid_grid",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::UnsupportedKernel { .. } => "unsupported_kernel",
            Error::Unstable { .. } => "unstable",
            Error::Singular(_) => "singular",
            Error::ZeroNorm => "zero_norm",
            Error::Diverged { .. } => "diverged",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
