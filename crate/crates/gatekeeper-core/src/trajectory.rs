//! Exact unicycle propagation and uniformly sampled trajectories.
//!
//! The flow of the unicycle under a constant input has a closed form (a
//! circular arc, or a straight line when the turn rate vanishes), so a
//! trajectory can be represented exactly by its start state plus a sequence
//! of piecewise-constant inputs. Every consumer in this crate relies on that
//! exactness: safety checks, cost integrals, and the simulator all see the
//! same states to the last bit.

use alloc::vec::Vec;

use crate::state::{wrap_angle, AgentState, ControlInput};
use crate::{Error, Result};

/// Turn rates below this magnitude are treated as straight-line motion; the
/// arc formula divides by the turn rate and loses precision near zero.
pub const STRAIGHT_OMEGA_EPSILON: f64 = 1e-9;

/// Worst propagation residual tolerated when validating externally supplied
/// states against their recorded inputs.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-9;

/// Absolute tolerance used to snap query times onto a sample grid.
pub const GRID_TOLERANCE: f64 = 1e-7;

/// Advances a state by `dt` under a constant input using the closed-form
/// unicycle flow.
///
/// Straight segments translate along the heading; turning segments follow a
/// circular arc of radius `v / omega`, evaluated in the half-angle product
/// form `v dt sinc(omega dt / 2)` at the midpoint heading. That form is
/// algebraically equal to the textbook `radius * (sin - sin)` difference but
/// stays fully precise as the turn rate approaches zero, where the
/// difference form cancels catastrophically; derivative-based callers rely
/// on this smoothness. Errors on non-finite arguments or negative `dt`.
pub fn propagate_exact(s: &AgentState, u: &ControlInput, dt: f64) -> Result<AgentState> {
    if !(s.is_finite() && u.is_finite() && dt.is_finite()) {
        return Err(Error::NonFinite);
    }
    if dt < 0.0 {
        return Err(Error::InvalidDuration(dt));
    }
    if libm::fabs(u.omega) < STRAIGHT_OMEGA_EPSILON {
        return Ok(AgentState {
            x: s.x + u.v * libm::cos(s.theta) * dt,
            y: s.y + u.v * libm::sin(s.theta) * dt,
            theta: s.theta,
        });
    }
    let half = 0.5 * u.omega * dt;
    let sinc = if libm::fabs(half) < 1e-4 {
        // Series sin(z)/z = 1 - z^2/6 + z^4/120; the next term is below
        // one ulp for |z| < 1e-4.
        let z2 = half * half;
        1.0 - z2 / 6.0 + z2 * z2 / 120.0
    } else {
        libm::sin(half) / half
    };
    let chord = u.v * dt * sinc;
    let mid = s.theta + half;
    Ok(AgentState {
        x: s.x + chord * libm::cos(mid),
        y: s.y + chord * libm::sin(mid),
        theta: wrap_angle(s.theta + u.omega * dt),
    })
}

/// A trajectory sampled on a uniform time grid.
///
/// Holds `n + 1` states and `n` inputs; input `i` is applied over
/// `[t_i, t_{i+1})`. Consecutive states always satisfy the exact flow under
/// the recorded input, so the stored samples *are* the trajectory rather
/// than an approximation of one.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledTrajectory {
    t0: f64,
    dt: f64,
    states: Vec<AgentState>,
    inputs: Vec<ControlInput>,
}

impl SampledTrajectory {
    /// Builds a trajectory by propagating `x0` through `inputs`, one sample
    /// interval each. This is the canonical constructor: the feasibility
    /// invariant holds bit-exactly by construction.
    pub fn from_inputs(
        t0: f64,
        dt: f64,
        x0: AgentState,
        inputs: Vec<ControlInput>,
    ) -> Result<Self> {
        if !(t0.is_finite() && x0.is_finite()) {
            return Err(Error::NonFinite);
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidDuration(dt));
        }
        let mut states = Vec::with_capacity(inputs.len() + 1);
        states.push(x0);
        let mut current = x0;
        for u in &inputs {
            current = propagate_exact(&current, u, dt)?;
            states.push(current);
        }
        Ok(Self { t0, dt, states, inputs })
    }

    /// Builds a trajectory from externally supplied states and inputs,
    /// checking the feasibility invariant to [`FEASIBILITY_TOLERANCE`].
    pub fn from_samples(
        t0: f64,
        dt: f64,
        states: Vec<AgentState>,
        inputs: Vec<ControlInput>,
    ) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::EmptyTrajectory);
        }
        if states.len() != inputs.len() + 1 {
            return Err(Error::LengthMismatch);
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidDuration(dt));
        }
        let traj = Self { t0, dt, states, inputs };
        let residual = traj.max_propagation_residual()?;
        if residual > FEASIBILITY_TOLERANCE {
            return Err(Error::InfeasibleTrajectory(residual));
        }
        Ok(traj)
    }

    /// Start time of the first sample.
    pub fn start_time(&self) -> f64 {
        self.t0
    }

    /// Sample spacing.
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Time of the last sample.
    pub fn end_time(&self) -> f64 {
        self.t0 + self.dt * self.inputs.len() as f64
    }

    /// Number of samples (states).
    pub fn len(&self) -> usize {
        self.states.len()
    }

    /// True when the trajectory is a single state with no inputs.
    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Time of sample `i`.
    pub fn time(&self, i: usize) -> f64 {
        self.t0 + self.dt * i as f64
    }

    /// All states.
    pub fn states(&self) -> &[AgentState] {
        &self.states
    }

    /// All inputs.
    pub fn inputs(&self) -> &[ControlInput] {
        &self.inputs
    }

    /// State at sample `i`.
    pub fn state(&self, i: usize) -> AgentState {
        self.states[i]
    }

    /// Input applied over `[t_i, t_{i+1})`.
    pub fn input(&self, i: usize) -> ControlInput {
        self.inputs[i]
    }

    /// Last state.
    pub fn end_state(&self) -> AgentState {
        *self.states.last().expect("trajectory holds at least one state")
    }

    /// Maps a time onto its sample index, requiring it to sit on the grid
    /// within [`GRID_TOLERANCE`].
    pub fn index_of_time(&self, t: f64) -> Result<usize> {
        let raw = (t - self.t0) / self.dt;
        let i = libm::round(raw);
        if i < 0.0 || i >= self.states.len() as f64 {
            return Err(Error::DomainMismatch { start: t, end: t });
        }
        if libm::fabs(t - (self.t0 + i * self.dt)) > GRID_TOLERANCE {
            return Err(Error::OffGrid(t));
        }
        Ok(i as usize)
    }

    /// State at a grid time.
    pub fn state_at_time(&self, t: f64) -> Result<AgentState> {
        Ok(self.states[self.index_of_time(t)?])
    }

    /// Input active at a grid time. The final sample time maps to the last
    /// input, which the caller would hold if it kept executing.
    pub fn input_at_time(&self, t: f64) -> Result<ControlInput> {
        if self.inputs.is_empty() {
            return Err(Error::EmptyTrajectory);
        }
        let i = self.index_of_time(t)?;
        Ok(self.inputs[i.min(self.inputs.len() - 1)])
    }

    /// Worst deviation between each stored state and the exact flow of its
    /// predecessor, measured as pose distance.
    pub fn max_propagation_residual(&self) -> Result<f64> {
        let mut worst = 0.0_f64;
        for (i, u) in self.inputs.iter().enumerate() {
            let predicted = propagate_exact(&self.states[i], u, self.dt)?;
            let residual = predicted.pose_distance(&self.states[i + 1]);
            if residual > worst {
                worst = residual;
            }
        }
        Ok(worst)
    }

    /// Re-propagates the trajectory on a new sample spacing, holding each
    /// recorded input over the new cells that fall inside its original
    /// interval.
    ///
    /// When `new_dt` exactly subdivides the original spacing the resampled
    /// trajectory follows the identical continuous path, so the original
    /// sample states reappear unchanged. Other spacings re-sample the input
    /// sequence zero-order-hold and may shift the endpoint.
    pub fn resample(&self, new_dt: f64) -> Result<Self> {
        if !(new_dt.is_finite() && new_dt > 0.0) {
            return Err(Error::InvalidDuration(new_dt));
        }
        if self.inputs.is_empty() {
            return Ok(self.clone());
        }
        let duration = self.dt * self.inputs.len() as f64;
        let n_new = libm::round(duration / new_dt) as usize;
        let n_new = n_new.max(1);
        let mut inputs = Vec::with_capacity(n_new);
        for j in 0..n_new {
            // Sample the original piecewise-constant input at the midpoint of
            // the new cell; midpoints cannot land on original cell boundaries
            // when the spacing divides evenly.
            let t_mid = (j as f64 + 0.5) * new_dt;
            let idx = ((t_mid / self.dt) as usize).min(self.inputs.len() - 1);
            inputs.push(self.inputs[idx]);
        }
        Self::from_inputs(self.t0, new_dt, self.states[0], inputs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn arc_trajectory() -> SampledTrajectory {
        let inputs = vec![ControlInput::new(0.9, 2.5); 200];
        SampledTrajectory::from_inputs(1.0, 0.005, AgentState::new(0.2, -0.4, 0.7), inputs)
            .unwrap()
    }

    #[test]
    fn canonical_construction_has_zero_residual() {
        let traj = arc_trajectory();
        assert_eq!(traj.max_propagation_residual().unwrap(), 0.0);
        assert_eq!(traj.len(), 201);
        assert!((traj.end_time() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn validated_construction_rejects_corrupted_states() {
        let traj = arc_trajectory();
        let mut states = traj.states().to_vec();
        states[40].x += 1e-6;
        let err = SampledTrajectory::from_samples(1.0, 0.005, states, traj.inputs().to_vec());
        assert!(matches!(err, Err(Error::InfeasibleTrajectory(_))));
        let ok = SampledTrajectory::from_samples(
            1.0,
            0.005,
            traj.states().to_vec(),
            traj.inputs().to_vec(),
        );
        assert!(ok.is_ok());
    }

    #[test]
    fn grid_lookup_snaps_and_rejects_off_grid_times() {
        let traj = arc_trajectory();
        assert_eq!(traj.index_of_time(1.0).unwrap(), 0);
        assert_eq!(traj.index_of_time(1.5 + 1e-9).unwrap(), 100);
        assert!(matches!(traj.index_of_time(1.0025), Err(Error::OffGrid(_))));
        assert!(matches!(traj.index_of_time(5.0), Err(Error::DomainMismatch { .. })));
    }

    #[test]
    fn resample_identity_is_bit_exact() {
        let traj = arc_trajectory();
        let same = traj.resample(traj.dt()).unwrap();
        assert_eq!(traj, same);
    }

    #[test]
    fn resample_refinement_preserves_endpoint() {
        let traj = arc_trajectory();
        for divisor in [2.0, 10.0] {
            let fine = traj.resample(traj.dt() / divisor).unwrap();
            assert_eq!(fine.len(), (traj.len() - 1) * divisor as usize + 1);
            let gap = fine.end_state().pose_distance(&traj.end_state());
            assert!(gap < 1e-9, "divisor {divisor}: endpoint moved {gap:.2e}");
            assert_eq!(fine.max_propagation_residual().unwrap(), 0.0);
        }
    }

    #[test]
    fn input_lookup_uses_half_open_cells() {
        let inputs = vec![
            ControlInput::new(0.8, 0.0),
            ControlInput::new(0.9, 1.0),
            ControlInput::new(1.0, -1.0),
        ];
        let traj =
            SampledTrajectory::from_inputs(0.0, 0.5, AgentState::new(0.0, 0.0, 0.0), inputs)
                .unwrap();
        assert_eq!(traj.input_at_time(0.0).unwrap(), ControlInput::new(0.8, 0.0));
        assert_eq!(traj.input_at_time(1.0).unwrap(), ControlInput::new(1.0, -1.0));
        // The final sample holds the last input.
        assert_eq!(traj.input_at_time(1.5).unwrap(), ControlInput::new(1.0, -1.0));
    }
}
