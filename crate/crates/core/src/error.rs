use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("density {rho} (normalized {normalized:.6}) is outside the domain of {what}")]
    Domain {
        what: &'static str,
        rho: f64,
        normalized: f64,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("CFL violation: courant number {courant:.4} exceeds {limit}")]
    Cfl { courant: f64, limit: f64 },

    #[error("negative density {value:e} produced in cell {cell}; time step too large")]
    NegativeDensity { cell: usize, value: f64 },

    #[error("singular Jacobian at Newton iteration {iteration}")]
    SingularJacobian { iteration: usize },

    #[error("Newton did not converge: residual {residual:e} after {iterations} iterations")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("config parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("Fourier mode denominator vanishes (|d| = {magnitude:e}) at rho_bar={rho_bar}, lambda={lambda}")]
    Resonance { rho_bar: f64, lambda: f64, magnitude: f64 },
}

impl Error {
    /// Process exit code: 2 for configuration problems, 3 for solver
    /// failures, 4 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter { .. }
            | Error::Domain { .. }
            | Error::Parse { .. }
            | Error::DimensionMismatch(_) => 2,
            Error::Io { .. } => 4,
            _ => 3,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
