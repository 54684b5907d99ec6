use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported polynomial order {0} (supported: 0..=14)")]
    UnsupportedOrder(usize),

    #[error("point {0} lies outside the reference interval [-1, 1]")]
    Domain(f64),

    #[error("invalid mesh: {0}")]
    Mesh(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("singular local operator (p = {p}, nu = {nu:?})")]
    SingularOperator { p: usize, nu: Vec<f64> },

    #[error("face penalties do not match the operator: {0}")]
    FaceMismatch(String),

    #[error("Picard iteration did not converge after {iterations} iterations (last update {residual:e})")]
    Divergence { iterations: usize, residual: f64 },

    #[error("instability detected at t = {time}: max |q| = {max_abs:e} exceeds {limit:e}")]
    Unstable { time: f64, max_abs: f64, limit: f64 },

    #[error("characteristic solve failed at ({x}, {y}, t = {t}): {reason}")]
    Characteristics { x: f64, y: f64, t: f64, reason: String },

    #[error("exact solution has zero norm")]
    ZeroNorm,

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
