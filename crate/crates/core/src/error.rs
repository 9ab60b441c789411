use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("step size underflow at t = {t:e} s (h = {h:e} s); stiff segment")]
    StepSizeUnderflow { t: f64, h: f64 },

    #[error("integration exceeded {0} steps")]
    TooManySteps(usize),

    #[error("state invariant violated after integration: {0}")]
    InvariantViolation(String),

    #[error("no positive-frequency resonance for {transition} at harmonic n = {n}")]
    NoResonance { transition: String, n: i32 },

    #[error("calibration did not converge: {0}")]
    CalibrationFailed(String),

    #[error("tomography settings are not informationally complete: {0}")]
    NotInformationallyComplete(String),

    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("unknown transition or gate: {0}")]
    UnknownTransition(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
