use thiserror::Error;

/// Errors raised by the design pipeline, the controllers and the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("DARE divergence after {iterations} iterations (relative change {residual:.3e})")]
    DareDivergence { iterations: usize, residual: f64 },

    #[error("contraction infeasible: lambda {lambda} must exceed the closed-loop spectral radius {spectral_radius}")]
    ContractionInfeasible { lambda: f64, spectral_radius: f64 },

    #[error("design infeasible: {0}")]
    DesignInfeasible(String),

    #[error("input shape undefined: {0}")]
    InputShapeUndefined(String),

    #[error("design failed validation: {0}")]
    InvalidDesign(String),

    #[error("solver returned {status} ({detail})")]
    Solver { status: String, detail: String },

    #[error("IS-SMPC initially infeasible at x0 = {x0:?}")]
    InitiallyInfeasible { x0: Vec<f64> },

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Strips any `AtStep` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } => source.root(),
            e => e,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
