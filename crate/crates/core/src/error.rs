use thiserror::Error;

/// Failure classes surfaced by the library. The CLI maps these onto exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("shift {delta} outside the truncated domain (L = {l})")]
    ShiftRange { delta: f64, l: f64 },
    #[error("no transverse direction for d = 1")]
    NoTransverse,
    #[error("model: {0}")]
    Model(String),
    #[error("evaluation produced a non-finite value: {0}")]
    NonFinite(String),
    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },
    #[error("rest state is not hyperbolic: {0}")]
    Hyperbolicity(String),
    #[error("phase initialisation failed: {0}")]
    Initialisation(String),
    #[error("spectral gap violated: beta = {0}")]
    SpectralGap(f64),
    #[error("covariance is indefinite: {0}")]
    Indefinite(String),
    #[error("singular linear system at pivot {0}")]
    Singular(usize),
    #[error("recentering required: |gamma| = {gamma} >= L/2 = {half}")]
    Recenter { gamma: f64, half: f64 },
    #[error("blow-up at t = {t}: sup|u| = {sup}")]
    Blowup { t: f64, sup: f64 },
    #[error("path resolution {have} below the required {need}")]
    Resolution { have: usize, need: usize },
    #[error("unsupported process: {0}")]
    Unsupported(String),
    #[error("fit needs at least {need} samples, got {have}")]
    TooFewSamples { need: usize, have: usize },
    #[error("uninformative design: {0}")]
    Design(String),
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
