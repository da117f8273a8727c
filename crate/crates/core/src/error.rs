use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("diffusion constant overflows for T2/tau = {ratio:.3e}")]
    DiffusionOverflow { ratio: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("Fock truncation too small: {what} (tail mass {tail:.3e} at t = {time:.6e} s, n_fock = {n_fock})")]
    Truncation { what: String, time: f64, tail: f64, n_fock: usize },

    #[error("norm drift {drift:.3e} at t = {time:.6e} s")]
    NormDrift { time: f64, drift: f64 },

    #[error("matrix is not Hermitian (max deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },

    #[error("missing noise channel {0}")]
    MissingNoiseChannel(usize),

    #[error("eigensolver failed: {0}")]
    Eigen(String),

    #[error("ancilla probe is nonlinear (quadratic/linear = {ratio:.3e}); shrink the probe grid")]
    ProbeNonlinear { ratio: f64 },

    #[error("trajectory {index} (seed {seed:#018x}) failed: {source}")]
    Trajectory {
        index: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("unknown experiment {0:?}")]
    UnknownExperiment(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub(crate) fn ensure_finite(value: f64, what: &'static str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
