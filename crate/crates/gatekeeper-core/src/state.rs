//! Vehicle state, control input, and input bounds.
//!
//! All quantities are in normalized units: positions in length units,
//! headings in radians, speeds in length units per time unit.

use core::f64::consts::{PI, TAU};

use crate::{Error, Result};

/// Wraps an angle to the half-open interval `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle % TAU;
    if a > PI {
        a -= TAU;
    } else if a <= -PI {
        a += TAU;
    }
    a
}

/// Planar pose of a unicycle vehicle.
///
/// The heading is kept normalized to `(-pi, pi]` by every constructor and
/// propagation step, so two states describing the same pose compare equal.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AgentState {
    /// Position along the first axis.
    pub x: f64,
    /// Position along the second axis.
    pub y: f64,
    /// Heading in radians, normalized to `(-pi, pi]`.
    pub theta: f64,
}

impl AgentState {
    /// Creates a state, normalizing the heading.
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta: wrap_angle(theta) }
    }

    /// True when all components are finite.
    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }

    /// Euclidean distance between positions, ignoring heading.
    pub fn position_distance(&self, other: &AgentState) -> f64 {
        libm::hypot(self.x - other.x, self.y - other.y)
    }

    /// Pose distance: position distance plus the absolute wrapped heading
    /// difference. Zero exactly when the poses coincide.
    pub fn pose_distance(&self, other: &AgentState) -> f64 {
        self.position_distance(other) + libm::fabs(wrap_angle(self.theta - other.theta))
    }
}

/// Speed and turn-rate command held over one sample interval.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ControlInput {
    /// Forward speed.
    pub v: f64,
    /// Turn rate (positive is counterclockwise).
    pub omega: f64,
}

impl ControlInput {
    /// Creates an input command.
    pub fn new(v: f64, omega: f64) -> Self {
        Self { v, omega }
    }

    /// True when both components are finite.
    pub fn is_finite(&self) -> bool {
        self.v.is_finite() && self.omega.is_finite()
    }
}

/// Box constraints on the control input.
///
/// The speed interval excludes zero, so the vehicle can never stop or
/// hover; every safety argument in this crate works within that limit.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InputBounds {
    /// Minimum forward speed (strictly positive).
    pub v_min: f64,
    /// Maximum forward speed.
    pub v_max: f64,
    /// Maximum absolute turn rate.
    pub omega_max: f64,
}

impl InputBounds {
    /// Creates bounds after checking `0 < v_min <= v_max` and `omega_max > 0`.
    pub fn new(v_min: f64, v_max: f64, omega_max: f64) -> Result<Self> {
        if !(v_min.is_finite() && v_max.is_finite() && omega_max.is_finite()) {
            return Err(Error::NonFinite);
        }
        if !(v_min > 0.0 && v_min <= v_max && omega_max > 0.0) {
            return Err(Error::InvalidBounds);
        }
        Ok(Self { v_min, v_max, omega_max })
    }

    /// True when the input lies inside the box (bounds inclusive).
    pub fn contains(&self, u: &ControlInput) -> bool {
        u.v >= self.v_min
            && u.v <= self.v_max
            && u.omega >= -self.omega_max
            && u.omega <= self.omega_max
    }

    /// Clamps an input onto the box.
    pub fn clamp(&self, u: ControlInput) -> ControlInput {
        ControlInput {
            v: u.v.clamp(self.v_min, self.v_max),
            omega: u.omega.clamp(-self.omega_max, self.omega_max),
        }
    }
}

impl Default for InputBounds {
    /// Application defaults: speed in `[0.8, 1.0]`, turn rate in `[-10, 10]`.
    fn default() -> Self {
        Self { v_min: 0.8, v_max: 1.0, omega_max: 10.0 }
    }
}
