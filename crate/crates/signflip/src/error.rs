//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// IRLS exhausted its iteration budget without meeting the score tolerance.
    #[error(
        "fit did not converge within {iterations} iterations (max score component {score:.3e})"
    )]
    NonConvergence { iterations: usize, score: f64 },

    /// Binomial fitted means pinned at 0/1 with an ill-conditioned information matrix.
    #[error("separation detected: fitted probabilities within {mu_eps:.1e} of 0/1 and information condition number {cond:.3e}")]
    SeparationDetected { mu_eps: f64, cond: f64 },

    /// Design matrix is rank deficient or the weighted cross-product cannot be factored.
    #[error("singular design: {0}")]
    SingularDesign(String),

    /// Model inputs violate the family/shape contract.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// A flipped variance fell at or below its floor; the flip cannot be standardized.
    #[error("degenerate flipped variance {variance:.3e} (floor {floor:.3e})")]
    DegenerateVariance { variance: f64, floor: f64 },

    /// The observed (identity-flip) row contains a degenerate cell, so no
    /// procedure consuming the matrix can run.
    #[error("degenerate statistic in the observed row for {count} hypothesis(es)")]
    DegenerateObserved { count: usize },

    /// Exhaustive flip enumeration was requested for an n that is too large.
    #[error("exhaustive plan for n={n} exceeds the limit of n={max}")]
    TooLarge { n: usize, max: usize },

    /// Closed testing was requested for more hypotheses than the 2^m budget allows.
    #[error("closed testing over m={m} hypotheses exceeds the limit of m={max}")]
    TooManyHypotheses { m: usize, max: usize },

    /// The response covariance estimate could not be factored.
    #[error("singular covariance estimate for the response scores")]
    SingularCovariance,

    /// Mismatched dimensions between inputs.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Malformed input file or configuration.
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
