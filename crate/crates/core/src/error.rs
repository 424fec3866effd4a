use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid model parameters: {0}")]
    InvalidParams(&'static str),

    #[error("density {0} outside the admissible domain")]
    Domain(f64),

    #[error("scaling a_n = {a_n} violates n^(d-1) sqrt(g_d(n)) = {lower} < a_n < n^d = {upper}")]
    Scaling { a_n: f64, lower: f64, upper: f64 },

    #[error("invalid scaling: {0}")]
    InvalidScaling(&'static str),

    #[error("root finding failed: {0}")]
    Internal(&'static str),

    #[error("site marginal {prob} at site {site} leaves (0,1)")]
    MarginalOutOfRange { site: usize, prob: f64 },

    #[error("invalid simulation config: {0}")]
    InvalidConfig(&'static str),

    #[error("proposed rate factor {factor} exceeds thinning bound {bound}")]
    RateOverflow { factor: f64, bound: f64 },

    #[error("incremental sum drifted: incremental {incremental}, recomputed {recomputed}")]
    DriftDetected { incremental: f64, recomputed: f64 },

    #[error("|log M| = {value} exceeds the path-wise bound {bound}")]
    BoundViolated { value: f64, bound: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(&'static str),

    #[error("malformed snapshot: {0}")]
    Snapshot(&'static str),
}
