use thiserror::Error;

/// Errors produced anywhere in the simulation / learning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not skew-symmetric (|A + A^T|_F = {0:.3e})")]
    NotSkew(f64),
    #[error("matrix is not a rotation (orthogonality error {orth:.3e}, det {det:.12})")]
    NotRotation { orth: f64, det: f64 },
    #[error("invalid wing parameters: {0}")]
    InvalidWingParams(String),
    #[error("control delta channel {channel} = {value:.4} exceeds the clamp {limit:.4}")]
    DeltaClamp { channel: usize, value: f64, limit: f64 },
    #[error("schedule evaluated at t = {t} outside [0, {period}]")]
    ScheduleRange { t: f64, period: f64 },
    #[error("reduced mass matrix near-singular at t = {t:.6} (cond {cond:.3e})")]
    SingularMass { t: f64, cond: f64 },
    #[error("dynamics failed in stage {stage} at t = {t:.6}: {source}")]
    Stage {
        stage: usize,
        t: f64,
        #[source]
        source: Box<Error>,
    },
    #[error("non-finite state at t = {0:.6}")]
    NonFinite(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("orbit search did not converge: best defect {best_defect:.3e} after {iterations} iterations")]
    OrbitNonConvergence { best_defect: f64, iterations: usize },
    #[error("expert solve failed: {reason} (best J = {best_cost:.4e})")]
    Expert { reason: String, best_cost: f64 },
    #[error("training diverged at iteration {iteration} (loss trace: {trace:?})")]
    TrainingDiverged { iteration: usize, trace: Vec<f64> },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit status: 1 for bad input, 2 for numerical failure, 3 for
    /// non-convergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::OrbitNonConvergence { .. } | Error::Expert { .. } | Error::TrainingDiverged { .. } => 3,
            Error::Invalid(_) | Error::Io(_) | Error::Json(_) | Error::Parse(_) | Error::InvalidWingParams(_) | Error::Dimension(_) => 1,
            _ => 2,
        }
    }
}
