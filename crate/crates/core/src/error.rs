use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("contraction condition violated: dt = {dt} must be below {bound}")]
    ContractionViolated { dt: f64, bound: f64 },

    #[error("{solver} failed: residual {residual:e} after {iterations} iterations")]
    Numerical {
        solver: &'static str,
        residual: f64,
        iterations: usize,
    },

    #[error("{what} did not converge in {iterations} iterations (last difference {last:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        last: f64,
    },

    #[error("parse error at column {column}: {message}")]
    Parse { column: usize, message: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
        if expected == found {
            Ok(())
        } else {
            Err(Error::Shape {
                context,
                expected,
                found,
            })
        }
    }
}
