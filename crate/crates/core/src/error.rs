use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("energy level out of range: {0}")]
    Range(String),
    #[error("degenerate point: {0}")]
    Degenerate(String),
    #[error("no resonance: {0}")]
    NoResonance(String),
    #[error("no trap: chi = {chi}, need |chi| < 1")]
    NoTrap { chi: f64 },
    #[error("orbit did not close: {0}")]
    NonClosure(String),
    #[error("overflow: {0}")]
    Overflow(String),
    #[error("step size too large: dt = {dt}, limit = {limit}")]
    StepSize { dt: f64, limit: f64 },
    #[error("trajectory diverged at t = {t}")]
    BlowUp { t: f64 },
    #[error("outside the five-fixed-point regime: {0}")]
    Regime(String),
    #[error("singular Sylvester equation")]
    SingularSylvester,
    #[error("no fan member reached the saddle (closest {closest:.3e})")]
    NoHit { closest: f64 },
    #[error("invalid parameter: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
