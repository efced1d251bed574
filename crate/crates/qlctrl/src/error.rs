//! Error type shared by all solver stages.

use nalgebra::DVector;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong while building systems or synthesizing
/// controls. Variants carry enough context (node index, iteration, window,
/// witness direction) to point at the failing stage directly.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A constructor or solver argument violates its domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A coefficient map produced a non-finite entry.
    #[error("coefficient evaluation failed at t = {t}: {detail}")]
    CoefficientEvaluation { t: f64, detail: String },

    /// A matrix power or exponential left the representable range.
    #[error("overflow in matrix exponential: {0}")]
    Overflow(String),

    /// The Gramian stayed numerically singular through the whole
    /// regularization ladder; `witness` spans the direction that cannot be
    /// reached (eigenvector of the smallest eigenvalue).
    #[error(
        "uncontrollable direction (gramian lambda_min = {lambda_min:.3e}, \
         lambda_max = {lambda_max:.3e}): regularization ladder exhausted"
    )]
    Uncontrollable {
        lambda_min: f64,
        lambda_max: f64,
        witness: DVector<f64>,
    },

    /// A trajectory left the representable or admissible range; `node` is the
    /// first grid node where the state was bad.
    #[error("trajectory blow-up at node {node} (t = {t}): {detail}")]
    BlowUp { node: usize, t: f64, detail: String },

    /// A nested failure inside one fixed-point iteration.
    #[error("iteration {iteration} failed: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    /// A nested failure inside one marching window.
    #[error("marching window {window} failed: {source}")]
    Window {
        window: usize,
        #[source]
        source: Box<Error>,
    },

    /// Marching exceeded its window budget before covering the horizon.
    /// The partial report covers the windows solved so far.
    #[error("marching did not terminate after {windows} windows (cap {cap})")]
    NonTermination {
        windows: usize,
        cap: u64,
        partial: Box<crate::nonlinctrl::SolveReport>,
    },

    /// A nested failure while solving one sample path.
    #[error("path {path_index} failed: {source}")]
    Path {
        path_index: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Convenience constructor for parameter violations.
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// True when the root cause is an exhausted regularization ladder.
    pub fn is_uncontrollable(&self) -> bool {
        match self {
            Error::Uncontrollable { .. } => true,
            Error::Iteration { source, .. }
            | Error::Window { source, .. }
            | Error::Path { source, .. } => source.is_uncontrollable(),
            _ => false,
        }
    }

    /// True when the root cause is a diverging trajectory.
    pub fn is_blow_up(&self) -> bool {
        match self {
            Error::BlowUp { .. } => true,
            Error::Iteration { source, .. }
            | Error::Window { source, .. }
            | Error::Path { source, .. } => source.is_blow_up(),
            _ => false,
        }
    }
}
