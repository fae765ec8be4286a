use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid needs at least 3 points, got {0}")]
    GridTooSmall(usize),

    #[error("field has {got} entries but the grid has {expected} points")]
    LengthMismatch { expected: usize, got: usize },

    #[error("density has non-positive total mass {0}")]
    NonPositiveMass(f64),

    #[error("density entry {value} at index {index} is below the negativity tolerance")]
    NegativeDensity { index: usize, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("time-zone shift {p} rad is not a whole number of grid points on n = {n}")]
    NonIntegralRotation { p: f64, n: usize },

    #[error("time step {dt} h exceeds the CFL bound {bound} h")]
    CflViolation { dt: f64, bound: f64 },

    #[error("singular linear system at iteration {iteration}")]
    SingularSystem { iteration: usize },

    #[error("Mathieu truncation did not stabilize by N = {0}")]
    MathieuTruncation(usize),

    #[error("ergodic solution is not usable for recovery: {0}")]
    UnusableSolution(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("solution file error: {0}")]
    Solution(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
