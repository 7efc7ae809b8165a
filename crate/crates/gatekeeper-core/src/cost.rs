//! Deviation costs between trajectories.
//!
//! A running cost scores how far a trajectory strays from a reference at one
//! instant; [`integrate_cost`] accumulates it over a time window with
//! trapezoidal quadrature on the shared sample grid. The filter uses these
//! integrals both to pick switch times and to report its suboptimality
//! bound, so the same quadrature convention must be used everywhere.

use crate::state::{wrap_angle, AgentState, ControlInput};
use crate::trajectory::{SampledTrajectory, GRID_TOLERANCE};
use crate::{Error, Result};

/// Relative tolerance for symmetry and positive-semidefiniteness checks.
const WEIGHT_TOLERANCE: f64 = 1e-12;

#[allow(clippy::needless_range_loop)]
fn check_symmetric_psd(m: &[&[f64]]) -> Result<()> {
    let n = m.len();
    let mut scale = 0.0_f64;
    for row in m {
        for &v in *row {
            if !v.is_finite() {
                return Err(Error::NonFinite);
            }
            scale = scale.max(libm::fabs(v));
        }
    }
    let tol = WEIGHT_TOLERANCE * (1.0 + scale);
    for i in 0..n {
        for j in (i + 1)..n {
            if libm::fabs(m[i][j] - m[j][i]) > tol {
                return Err(Error::InvalidCost);
            }
        }
    }
    // A symmetric matrix is positive semidefinite iff every principal minor
    // is nonnegative; at size <= 3 they are cheap to enumerate.
    let minor2 = |i: usize, j: usize| m[i][i] * m[j][j] - m[i][j] * m[j][i];
    for i in 0..n {
        if m[i][i] < -tol {
            return Err(Error::InvalidCost);
        }
        for j in (i + 1)..n {
            if minor2(i, j) < -tol {
                return Err(Error::InvalidCost);
            }
        }
    }
    if n == 3 {
        let det = m[0][0] * minor2(1, 2) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        if det < -tol {
            return Err(Error::InvalidCost);
        }
    }
    Ok(())
}

/// Symmetric positive-semidefinite weight on state deviation `(x, y, theta)`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StateWeight([[f64; 3]; 3]);

impl StateWeight {
    /// Validates symmetry and positive semidefiniteness.
    pub fn new(m: [[f64; 3]; 3]) -> Result<Self> {
        check_symmetric_psd(&[&m[0], &m[1], &m[2]])?;
        Ok(Self(m))
    }

    /// Diagonal weight.
    pub fn diag(x: f64, y: f64, theta: f64) -> Result<Self> {
        Self::new([[x, 0.0, 0.0], [0.0, y, 0.0], [0.0, 0.0, theta]])
    }

    /// The quadratic form `d' M d`.
    pub fn quadratic_form(&self, d: [f64; 3]) -> f64 {
        let mut acc = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                acc += d[i] * self.0[i][j] * d[j];
            }
        }
        acc
    }

    /// Raw matrix entries.
    pub fn entries(&self) -> &[[f64; 3]; 3] {
        &self.0
    }
}

/// Symmetric positive-semidefinite weight on input deviation `(v, omega)`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InputWeight([[f64; 2]; 2]);

impl InputWeight {
    /// Validates symmetry and positive semidefiniteness.
    pub fn new(m: [[f64; 2]; 2]) -> Result<Self> {
        check_symmetric_psd(&[&m[0], &m[1]])?;
        Ok(Self(m))
    }

    /// Diagonal weight.
    pub fn diag(v: f64, omega: f64) -> Result<Self> {
        Self::new([[v, 0.0], [0.0, omega]])
    }

    /// The zero weight: input deviation does not contribute.
    pub fn zero() -> Self {
        Self([[0.0; 2]; 2])
    }

    /// The quadratic form `d' M d`.
    pub fn quadratic_form(&self, d: [f64; 2]) -> f64 {
        let mut acc = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                acc += d[i] * self.0[i][j] * d[j];
            }
        }
        acc
    }

    /// Raw matrix entries.
    pub fn entries(&self) -> &[[f64; 2]; 2] {
        &self.0
    }
}

/// Which running-cost family to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CostVariant {
    /// Weighted squared deviation of state and input.
    Quadratic,
    /// Quadratic cost discounted by `exp(-gamma (t - t_k))`.
    Discounted,
    /// Zero exactly at the reference, one elsewhere.
    Indicator,
}

/// Running-cost configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CostConfig {
    /// State-deviation weight.
    pub q: StateWeight,
    /// Input-deviation weight.
    pub r: InputWeight,
    /// Discount rate (used by [`CostVariant::Discounted`]).
    pub gamma: f64,
    /// Cost family.
    pub variant: CostVariant,
}

impl CostConfig {
    /// Validates the discount rate; the weights enforce their own invariants.
    pub fn new(q: StateWeight, r: InputWeight, gamma: f64, variant: CostVariant) -> Result<Self> {
        if !gamma.is_finite() {
            return Err(Error::NonFinite);
        }
        if gamma < 0.0 {
            return Err(Error::InvalidCost);
        }
        Ok(Self { q, r, gamma, variant })
    }

    /// Re-checks every invariant, including the weight matrices; needed
    /// after deserializing, which bypasses the checked constructors.
    pub fn validate(&self) -> Result<()> {
        StateWeight::new(*self.q.entries())?;
        InputWeight::new(*self.r.entries())?;
        Self::new(self.q, self.r, self.gamma, self.variant)?;
        Ok(())
    }

    /// Formation-flight default: position-only quadratic deviation,
    /// `Q = diag(1, 1, 0)`, no input weight, no discount.
    ///
    /// The position-only weight makes the state cost positive semidefinite
    /// rather than definite; every zero-cost argument in this crate that
    /// relies on exact prefix equality still goes through because prefixes
    /// are equal bit-for-bit, not merely at zero cost.
    pub fn formation_default() -> Self {
        Self {
            q: StateWeight::diag(1.0, 1.0, 0.0).expect("constant weight is valid"),
            r: InputWeight::zero(),
            gamma: 0.0,
            variant: CostVariant::Quadratic,
        }
    }
}

/// Instantaneous deviation cost of `(x1, u1)` against the reference
/// `(x2, u2)` at time `t`.
///
/// Heading differences are wrapped to `(-pi, pi]` before weighting. The
/// indicator variant compares states and inputs exactly.
pub fn running_cost(
    cfg: &CostConfig,
    t: f64,
    x1: &AgentState,
    u1: &ControlInput,
    x2: &AgentState,
    u2: &ControlInput,
    t_k: f64,
) -> f64 {
    match cfg.variant {
        CostVariant::Indicator => {
            if x1 == x2 && u1 == u2 {
                0.0
            } else {
                1.0
            }
        }
        CostVariant::Quadratic | CostVariant::Discounted => {
            let dx = [x1.x - x2.x, x1.y - x2.y, wrap_angle(x1.theta - x2.theta)];
            let du = [u1.v - u2.v, u1.omega - u2.omega];
            let base = cfg.q.quadratic_form(dx) + cfg.r.quadratic_form(du);
            if cfg.variant == CostVariant::Discounted {
                libm::exp(-cfg.gamma * (t - t_k)) * base
            } else {
                base
            }
        }
    }
}

/// Integrates the running cost of `traj` against `reference` over `[a, b]`
/// by composite trapezoidal quadrature on the shared sample grid.
///
/// Both trajectories must use the same spacing with aligned phases and must
/// cover `[a, b]`. At each sample the input of the cell starting there is
/// used (the final sample reuses the last input), matching
/// [`SampledTrajectory::input_at_time`].
pub fn integrate_cost(
    cfg: &CostConfig,
    traj: &SampledTrajectory,
    reference: &SampledTrajectory,
    a: f64,
    b: f64,
    t_k: f64,
) -> Result<f64> {
    if b < a {
        return Err(Error::DomainMismatch { start: a, end: b });
    }
    let dt = traj.dt();
    if libm::fabs(dt - reference.dt()) > WEIGHT_TOLERANCE {
        return Err(Error::GridMismatch);
    }
    let phase = (traj.start_time() - reference.start_time()) / dt;
    if libm::fabs(phase - libm::round(phase)) * dt > GRID_TOLERANCE {
        return Err(Error::GridMismatch);
    }
    let ia = traj.index_of_time(a)?;
    let ib = traj.index_of_time(b)?;
    let ra = reference.index_of_time(a)?;
    if ia == ib {
        return Ok(0.0);
    }

    let integrand = |offset: usize| -> f64 {
        let i = ia + offset;
        let r = ra + offset;
        let ui = traj.input(i.min(traj.inputs().len() - 1));
        let ur = reference.input(r.min(reference.inputs().len() - 1));
        running_cost(cfg, traj.time(i), &traj.state(i), &ui, &reference.state(r), &ur, t_k)
    };

    // Check the far end of the reference window up front so a short
    // reference fails with a domain error instead of an index panic.
    reference.index_of_time(b)?;

    let n = ib - ia;
    let mut acc = 0.5 * (integrand(0) + integrand(n));
    for offset in 1..n {
        acc += integrand(offset);
    }
    Ok(acc * dt)
}
