use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the range where `e^{4πs²}` is representable.
    #[error("argument {value} outside the safe nonlinearity range |s| <= {bound}")]
    Range { value: f64, bound: f64 },

    #[error("quadrature did not reach tolerance {tolerance:e}: estimated error {estimate:e}")]
    Quadrature { estimate: f64, tolerance: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate triangle {triangle} (signed area {area:e})")]
    DegenerateTriangle { triangle: usize, area: f64 },

    #[error("mesh error: {0}")]
    Mesh(String),

    #[error("{solver} did not converge after {iterations} iterations (last residual {residual:e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("no ridge: {0}")]
    NoRidge(String),

    #[error("path slid off the ridge: level {level:e} after {iterations} iterations")]
    RidgeCollapse { level: f64, iterations: usize },

    #[error("descent stalled at iteration {iterations} with gradient norm {grad_norm:e}")]
    Stalled {
        iterations: usize,
        grad_norm: f64,
        trace: Vec<(f64, f64)>,
    },

    /// A verified property of a result does not hold.
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
