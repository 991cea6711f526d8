use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("resolution error: {0}")]
    Resolution(String),

    #[error("stencil error at point {point} (direction angle {direction:.6} rad): {reason}")]
    Stencil {
        point: usize,
        direction: f64,
        reason: String,
    },

    #[error("degenerate stencil: |det A| = {det:e} below guard {guard:e}")]
    DegenerateStencil { det: f64, guard: f64 },

    #[error("singular cost: |x - y| = {0:e}")]
    SingularCost(f64),

    #[error("{count} point(s) failed; first failure at point {first_point}: {first}")]
    PointFailures {
        count: usize,
        first_point: usize,
        first: Box<Error>,
    },

    #[error("numerical blow-up at iteration {iteration}")]
    BlowUp {
        iteration: usize,
        last_stable: Box<Vec<f64>>,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid cache file: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl fmt::Display) -> Self {
        Error::Parse {
            line,
            message: message.to_string(),
        }
    }

    /// Whether this error comes from grid geometry or stencil construction.
    pub fn is_geometric(&self) -> bool {
        match self {
            Error::Geometry(_)
            | Error::Stencil { .. }
            | Error::DegenerateStencil { .. }
            | Error::Resolution(_) => true,
            Error::PointFailures { first, .. } => first.is_geometric(),
            _ => false,
        }
    }
}
