use thiserror::Error;

use crate::model::Node;

/// Errors produced while building or solving a relay beamforming problem.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// The two channels span (numerically) a single direction, so the rank-2
    /// basis degenerates.
    #[error("channels are collinear (r = {r:.3e}, t+ = {t_plus:.3e})")]
    CollinearChannels { r: f64, t_plus: f64 },

    /// No beamformer can meet the SINR target of this node.
    #[error("SINR constraint {0} cannot be satisfied by any beamformer")]
    InfeasibleConstraint(Node),

    #[error("conjugate gradient did not converge within {0} iterations")]
    MaxIterations(usize),

    #[error("none of the six candidate solutions is feasible")]
    NoFeasibleCandidate,

    #[error("oracle found no feasible point from {starts} starts")]
    OracleFailed { starts: usize },

    #[error("no kept records in cell")]
    EmptyCell,
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors that describe the problem instance itself (as opposed
    /// to numerical or usage failures).
    pub fn is_problem_degenerate(&self) -> bool {
        matches!(
            self,
            Error::CollinearChannels { .. } | Error::InfeasibleConstraint(_)
        )
    }

    /// Short machine-friendly tag, used in CSV output.
    pub fn tag(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidParameter { .. } => "invalid_parameter",
            Error::CollinearChannels { .. } => "collinear_channels",
            Error::InfeasibleConstraint(Node::One) => "infeasible_1",
            Error::InfeasibleConstraint(Node::Two) => "infeasible_2",
            Error::MaxIterations(_) => "max_iterations",
            Error::NoFeasibleCandidate => "no_feasible_candidate",
            Error::OracleFailed { .. } => "oracle_failed",
            Error::EmptyCell => "empty_cell",
        }
    }
}
