use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside the domain of a function (log of zero distance,
    /// |u| >= 1 for the inverse error function, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A covariance matrix could not be factorized even after jitter escalation.
    #[error("numerical failure: {what} (n = {size}, final jitter = {jitter:.3e}, diag range = [{diag_min:.3e}, {diag_max:.3e}])")]
    Factorization { what: &'static str, size: usize, jitter: f64, diag_min: f64, diag_max: f64 },

    /// A configuration value violates an invariant or a key is unknown.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// The margin search bracket does not enclose the target.
    #[error("margin bracket [{low}, {high}] dB does not enclose target {target:e} (outage at high end = {outage_high:e}); widen the bracket")]
    Bracket { low: f64, high: f64, target: f64, outage_high: f64 },

    /// Too many trials were aborted by numerical failures.
    #[error("{aborted} of {total} trials aborted (limit 0.1%)")]
    TooManyAborted { aborted: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
