use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("point x is outside the projection ball of the ellipsoid (radicand {radicand:e})")]
    OutOfDomain { radicand: f64 },

    #[error("coincident points: focal parameter undefined")]
    CoincidentPoints,

    #[error("ray misses the target within s_max = {s_max}")]
    Miss { s_max: f64 },

    #[error("ray meets the target {roots} times; the visibility assumption fails")]
    Ambiguous { roots: usize },

    #[error("root finder did not converge after {iterations} iterations (last residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("wedge curve is incomplete: rays miss the target at lambda = {bad_lambdas:?}")]
    PartialCurve { bad_lambdas: Vec<f64> },

    #[error("surface is not admissible on the domain: {0}")]
    Configuration(String),

    #[error("atom {atom} cannot reach its prescribed mass inside the cylinder: {reason}")]
    Infeasible { atom: usize, reason: String },

    #[error("parameter out of range: {0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, Error>;
