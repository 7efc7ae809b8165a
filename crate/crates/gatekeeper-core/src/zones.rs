//! Engagement-zone constraints and sampled-trajectory safety checks.
//!
//! Each zone is a heading-dependent keep-out region: its effective radius
//! grows as the vehicle faces the zone head-on and shrinks from behind,
//! which makes the constraint nonlinear, nonconvex, and state-dependent.
//! The exact published range model this stands in for is intentionally
//! pluggable; everything downstream consumes only the signed clearance
//! value and its gradient.

use alloc::vec::Vec;

use crate::state::{wrap_angle, AgentState};
use crate::trajectory::{SampledTrajectory, GRID_TOLERANCE};
use crate::{Error, Result};

/// A single aspect-dependent keep-out zone.
///
/// The zone's effective radius at aspect angle `alpha` (the bearing of the
/// vehicle as seen from the zone, measured against the vehicle's heading
/// and the zone's own orientation) is
/// `R(alpha) = R_min + (R_max - R_min) * ((1 + cos(alpha)) / 2) ^ e`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EngagementZone {
    /// Zone center, LU.
    pub center: (f64, f64),
    /// Orientation of the zone's sensitive axis, rad.
    pub orientation: f64,
    /// Largest effective radius, LU.
    pub r_max: f64,
    /// Smallest effective radius, LU.
    pub r_min: f64,
    /// Aspect sharpness exponent, >= 1; larger focuses the lobe.
    pub aspect_exponent: f64,
}

impl EngagementZone {
    /// Builds a zone, validating `0 < r_min <= r_max` and exponent >= 1.
    pub fn new(
        center: (f64, f64),
        orientation: f64,
        r_max: f64,
        r_min: f64,
        aspect_exponent: f64,
    ) -> Result<Self> {
        let z = Self { center, orientation, r_max, r_min, aspect_exponent };
        z.validate()?;
        Ok(z)
    }

    /// Re-checks the construction invariants (useful after deserializing).
    pub fn validate(&self) -> Result<()> {
        let finite = self.center.0.is_finite()
            && self.center.1.is_finite()
            && self.orientation.is_finite()
            && self.r_max.is_finite()
            && self.r_min.is_finite()
            && self.aspect_exponent.is_finite();
        if !finite {
            return Err(Error::NonFinite);
        }
        if !(self.r_min > 0.0 && self.r_min <= self.r_max && self.aspect_exponent >= 1.0) {
            return Err(Error::InvalidZone);
        }
        Ok(())
    }

    /// Effective radius at aspect angle `alpha`.
    fn aspect_radius(&self, alpha: f64) -> f64 {
        let lobe = libm::pow((1.0 + libm::cos(alpha)) * 0.5, self.aspect_exponent);
        self.r_min + (self.r_max - self.r_min) * lobe
    }

    /// Derivative of the effective radius with respect to the aspect angle.
    fn aspect_radius_prime(&self, alpha: f64) -> f64 {
        let base = (1.0 + libm::cos(alpha)) * 0.5;
        let e = self.aspect_exponent;
        // d/d alpha of base^e; base^(e-1) stays finite because e >= 1.
        -(self.r_max - self.r_min) * e * libm::pow(base, e - 1.0) * libm::sin(alpha) * 0.5
    }
}

/// Signed clearance of a state from one zone: distance to the center minus
/// the effective radius at the current aspect. Positive outside, negative
/// inside; continuous and finite everywhere.
pub fn zone_value(z: &EngagementZone, s: &AgentState) -> f64 {
    let dx = s.x - z.center.0;
    let dy = s.y - z.center.1;
    let range = libm::hypot(dx, dy);
    let alpha = wrap_angle(libm::atan2(dy, dx) - s.theta - z.orientation);
    range - z.aspect_radius(alpha)
}

/// Analytic gradient of [`zone_value`] with respect to `(x, y, theta)`.
///
/// At the zone center the range term is not differentiable; the gradient
/// there is returned as the zero vector for the position components
/// (any subgradient choice works for the consumers, which only push away
/// from the boundary, never operate at the center).
pub fn zone_gradient(z: &EngagementZone, s: &AgentState) -> [f64; 3] {
    let dx = s.x - z.center.0;
    let dy = s.y - z.center.1;
    let range = libm::hypot(dx, dy);
    let alpha = wrap_angle(libm::atan2(dy, dx) - s.theta - z.orientation);
    let rp = z.aspect_radius_prime(alpha);
    if range < 1e-12 {
        return [0.0, 0.0, rp];
    }
    // alpha depends on position through the bearing atan2(dy, dx), whose
    // gradient is (-dy, dx) / range^2, and on heading with slope -1.
    [
        dx / range + rp * dy / (range * range),
        dy / range - rp * dx / (range * range),
        rp,
    ]
}

/// A collection of zones plus the sample-safety margin.
///
/// A state is safe when every zone clearance is at least `margin` (closed
/// condition). The margin compensates for checking safety at discrete
/// samples: it must dominate the largest inter-sample excursion,
/// `v_max * dt` at the defaults. The safe set here is time-invariant, but
/// queries carry a time argument so time-varying sets can slot in.
#[derive(Clone, Debug, PartialEq)]
pub struct SafeSet {
    zones: Vec<EngagementZone>,
    margin: f64,
}

/// Outcome of checking a trajectory window sample-by-sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryCheck {
    /// True when every sample in the window clears the margin.
    pub safe: bool,
    /// Time of the earliest violating sample, when any.
    pub first_violation: Option<f64>,
}

impl SafeSet {
    /// Builds a safe set, validating `margin >= 0` and every zone.
    pub fn new(zones: Vec<EngagementZone>, margin: f64) -> Result<Self> {
        if !margin.is_finite() || margin < 0.0 {
            return Err(Error::InvalidZone);
        }
        for z in &zones {
            z.validate()?;
        }
        Ok(Self { zones, margin })
    }

    /// The zones, in evaluation order.
    pub fn zones(&self) -> &[EngagementZone] {
        &self.zones
    }

    /// The safety margin, LU.
    pub fn margin(&self) -> f64 {
        self.margin
    }

    /// Minimum clearance over all zones; positive infinity with no zones.
    /// The time argument is unused by this time-invariant set.
    pub fn state_margin(&self, _t: f64, s: &AgentState) -> f64 {
        let mut min = f64::INFINITY;
        for z in &self.zones {
            let h = zone_value(z, s);
            if h < min {
                min = h;
            }
        }
        min
    }

    /// True when the minimum clearance is at least the margin.
    pub fn state_safe(&self, t: f64, s: &AgentState) -> bool {
        self.state_margin(t, s) >= self.margin
    }

    /// Checks every sample of `traj` with time in `[a, b]`, returning
    /// whether all clear the margin and the earliest violating sample time
    /// otherwise. Errors when the interval leaves the trajectory domain.
    pub fn trajectory_safe(
        &self,
        traj: &SampledTrajectory,
        a: f64,
        b: f64,
    ) -> Result<TrajectoryCheck> {
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::NonFinite);
        }
        let dt = traj.dt();
        let tol = GRID_TOLERANCE.max(1e-9 * dt);
        if a > b + tol
            || a < traj.start_time() - tol
            || b > traj.end_time() + tol
        {
            return Err(Error::DomainMismatch { start: a, end: b });
        }
        let last = traj.len() - 1;
        let lo = libm::ceil((a - traj.start_time()) / dt - 1e-6).max(0.0) as usize;
        let hi = (libm::floor((b - traj.start_time()) / dt + 1e-6) as usize).min(last);
        for i in lo..=hi.max(lo) {
            if i > last {
                break;
            }
            if !self.state_safe(traj.time(i), &traj.state(i)) {
                return Ok(TrajectoryCheck {
                    safe: false,
                    first_violation: Some(traj.time(i)),
                });
            }
        }
        Ok(TrajectoryCheck { safe: true, first_violation: None })
    }
}
