//! Error type shared by all modules of this crate.

use thiserror::Error;

/// Failure modes for model construction, solvers, and oracles.
#[derive(Debug, Error)]
pub enum Error {
    /// Inputs violate a documented precondition (bad dimensions, invalid
    /// probabilities, out-of-domain responses, ...).
    #[error("invalid input: {0}")]
    Invalid(String),

    /// A problem is too large for an exact routine with a hard capacity cap.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// A numerical routine failed to produce a usable result (singular
    /// factorization, degenerate tilt, root finder out of iterations).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Two configured components cannot be combined (e.g. a solver that
    /// requires a discrete prior paired with a Gaussian one).
    #[error("incompatible configuration: {0}")]
    Pairing(String),
}

pub type Result<T> = std::result::Result<T, Error>;
