use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A single reason a model description was rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Error)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValidationIssue {
    #[error("kernel is not symmetric at ({row}, {col}): {upper} vs {lower}")]
    NonSymmetricKernel {
        row: usize,
        col: usize,
        upper: f64,
        lower: f64,
    },
    #[error("{what}[{index}] = {value} is not strictly positive")]
    NonPositiveEntry {
        what: String,
        index: usize,
        value: f64,
    },
    #[error("type measure sums to {sum}, expected 1")]
    MeasureNotNormalized { sum: f64 },
    #[error("type counts sum to {sum}, expected n = {n}")]
    CountMismatch { sum: u64, n: u64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {}", join_issues(.0))]
    Validation(Vec<ValidationIssue>),
    #[error("{what} did not converge within {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },
    #[error("dimension {dim} exceeds the supported maximum {max} for {what}")]
    DimensionTooLarge {
        what: &'static str,
        dim: usize,
        max: usize,
    },
    #[error("weighted Laplacian minor is singular")]
    SingularLaplacian,
    #[error("matrix {0} is singular")]
    SingularMatrix(&'static str),
    #[error("{what}: size {size} exceeds limit {max}")]
    TooLarge {
        what: &'static str,
        size: u64,
        max: u64,
    },
    #[error("state space of {states} states exceeds limit {max}")]
    StateSpaceTooLarge { states: u64, max: u64 },
    #[error("{what}: shell sums do not decay (ratio {ratio:.4} at shell {shell})")]
    NoDecay {
        what: &'static str,
        shell: usize,
        ratio: f64,
    },
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("lattice with {points} points is too large for convolution (total count {total} > {max})")]
    LatticeTooLarge { points: u64, total: u64, max: u64 },
    #[error("census enumeration infeasible: total vertex count {total} > {max}")]
    TooManyPartitions { total: u64, max: u64 },
    #[error("model is not supercritical (sigma = {sigma})")]
    NotSupercritical { sigma: f64 },
    #[error("model is not subcritical (sigma = {sigma})")]
    NotSubcritical { sigma: f64 },
    #[error("model is near-critical (sigma = {sigma}); rate functions are undefined there")]
    NearCritical { sigma: f64 },
    #[error("{what} is not positive definite (min eigenvalue {min_eigenvalue:e})")]
    PdViolation {
        what: String,
        min_eigenvalue: f64,
    },
    #[error("quadratic coefficient of {what} is {value}, expected > 0")]
    NegativeRateCoefficient { what: String, value: f64 },
    #[error("no exponential moment found down to eta = {eta:e}")]
    NoExponentialMoment { eta: f64 },
    #[error("cumulant argument {value:.3} exceeds the overflow guard {limit}")]
    OverflowGuard { value: f64, limit: f64 },
    #[error("{got} replicates supplied, at least {needed} required")]
    InsufficientReplicates { got: usize, needed: usize },
    #[error("edge probability kappa/n = {ratio} reaches 1; {what} requires kappa < n")]
    EdgeProbabilityClamped { what: &'static str, ratio: f64 },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Input-side failures (as opposed to numerical ones).
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_) | Error::Config(_) | Error::PreconditionViolated(_) | Error::Io(_)
        )
    }
}

fn join_issues(issues: &[ValidationIssue]) -> String {
    issues
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Non-fatal conditions attached to results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Warning {
    /// The Perron root lies in the near-critical band; convergence is slow.
    NearCritical { sigma: f64 },
    /// Some kappa(r,s)/n >= 1 so edge probabilities were clamped to 1.
    EdgeProbabilityClamped { max_ratio: f64 },
    /// The exponential-moment condition on (kappa, mu) fails.
    MomentConditionFails { margin: f64 },
}
