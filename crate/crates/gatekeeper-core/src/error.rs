//! Crate-wide error type.

use core::fmt;

/// Errors produced by construction, propagation, planning, and filtering.
#[derive(Debug, Clone, PartialEq)]
#[non_exhaustive]
pub enum Error {
    /// A numeric argument was NaN or infinite.
    NonFinite,
    /// A duration or sample spacing was negative or zero where it must not be.
    InvalidDuration(f64),
    /// Input bounds were empty or non-finite.
    InvalidBounds,
    /// A cost configuration was rejected (asymmetric or indefinite weights,
    /// or a negative discount rate).
    InvalidCost,
    /// A zone or safe-set parameter was out of range.
    InvalidZone,
    /// A filter or planner configuration parameter was out of range.
    InvalidConfig,
    /// A trajectory had no states.
    EmptyTrajectory,
    /// State and input sequences have inconsistent lengths.
    LengthMismatch,
    /// Supplied states do not satisfy exact propagation under the recorded
    /// inputs; the value is the worst residual found.
    InfeasibleTrajectory(f64),
    /// A query time does not lie on the trajectory's sample grid.
    OffGrid(f64),
    /// A requested interval is not covered by a trajectory's domain.
    DomainMismatch {
        /// Start of the uncovered interval.
        start: f64,
        /// End of the uncovered interval.
        end: f64,
    },
    /// Two trajectories do not share compatible sampling (spacing or phase).
    GridMismatch,
    /// A path word cannot be flown at the requested speed: its radius is
    /// below the tightest admissible turn.
    InadmissibleTurn {
        /// Radius the word was built for.
        radius: f64,
        /// Minimum radius admissible at the requested speed.
        required: f64,
    },
    /// Conversion of a path word into a sampled trajectory failed to meet
    /// the endpoint tolerance.
    ConnectorFit,
    /// The leader path planner exhausted its budget without reaching the goal.
    PlanningFailed,
    /// A leader path failed validation; the value is the first unsafe or
    /// inadmissible sample time.
    InvalidLeaderPath(f64),
    /// A suboptimality report was requested for an invalid candidate.
    InvalidCandidate,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NonFinite => write!(f, "non-finite numeric input"),
            Error::InvalidDuration(dt) => write!(f, "invalid duration or spacing: {dt}"),
            Error::InvalidBounds => write!(f, "invalid input bounds"),
            Error::InvalidCost => write!(f, "invalid cost configuration"),
            Error::InvalidZone => write!(f, "invalid zone or safe-set parameter"),
            Error::InvalidConfig => write!(f, "invalid configuration parameter"),
            Error::EmptyTrajectory => write!(f, "trajectory has no states"),
            Error::LengthMismatch => {
                write!(f, "state and input sequences have inconsistent lengths")
            }
            Error::InfeasibleTrajectory(r) => {
                write!(f, "states violate exact propagation (residual {r:.3e})")
            }
            Error::OffGrid(t) => write!(f, "time {t} is not on the sample grid"),
            Error::DomainMismatch { start, end } => {
                write!(f, "interval [{start}, {end}] is not covered by the trajectory")
            }
            Error::GridMismatch => write!(f, "trajectories do not share compatible sampling"),
            Error::InadmissibleTurn { radius, required } => {
                write!(f, "word radius {radius} is below admissible minimum {required}")
            }
            Error::ConnectorFit => write!(f, "connector fit did not reach endpoint tolerance"),
            Error::PlanningFailed => write!(f, "planner exhausted its budget without a path"),
            Error::InvalidLeaderPath(t) => {
                write!(f, "leader path fails validation at t = {t}")
            }
            Error::InvalidCandidate => write!(f, "candidate is not valid"),
        }
    }
}

impl core::error::Error for Error {}
