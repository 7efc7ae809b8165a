//! Comparison controller: a per-step control barrier QP with slack
//! fallback.
//!
//! Each zone contributes one linear inequality on the input that asks the
//! clearance function not to decay faster than a gain times its value.
//! Stage one projects the nominal input onto the feasible set exactly;
//! when the rows conflict, stage two relaxes every row with a nonnegative
//! slack and minimizes a weighted slack norm plus the input deviation.
//! Both stages are solved by exact enumeration and descent on a tiny
//! piecewise-quadratic problem rather than an iterative QP library, so any
//! safety violations in closed loop are attributable to the method itself
//! (the clearance functions need not be valid barriers for this system),
//! not to solver tolerance.

use alloc::vec::Vec;

use crate::state::{AgentState, ControlInput, InputBounds};
use crate::zones::{zone_gradient, zone_value, EngagementZone};
use crate::{Error, Result};

/// Feasibility slack used when classifying candidate points; keeps the
/// exact enumeration robust to last-bit rounding.
const FEAS_EPS: f64 = 1e-9;

/// Parameters of the barrier controller.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CbfConfig {
    /// Linear barrier gain, 1/TU: rows demand `dh/dt >= -alpha_gain * h`.
    pub alpha_gain: f64,
    /// Weight of the squared slack norm against the input deviation in
    /// stage two.
    pub slack_weight: f64,
}

impl CbfConfig {
    /// Checks the configuration invariants.
    pub fn validate(&self) -> Result<()> {
        if self.alpha_gain.is_finite()
            && self.alpha_gain > 0.0
            && self.slack_weight.is_finite()
            && self.slack_weight > 0.0
        {
            Ok(())
        } else {
            Err(Error::InvalidConfig)
        }
    }
}

impl Default for CbfConfig {
    fn default() -> Self {
        Self { alpha_gain: 5.0, slack_weight: 100.0 }
    }
}

/// Linear inequality `a . u >= b_rhs` asking zone `z`'s clearance not to
/// decay faster than `alpha_gain` times its value at `s`.
///
/// The clearance gradient is composed with the vehicle's control-affine
/// fields: the position part acts on speed through the heading direction,
/// the heading part acts on turn rate directly.
pub fn cbf_constraint_row(
    z: &EngagementZone,
    s: &AgentState,
    alpha_gain: f64,
) -> ([f64; 2], f64) {
    let h = zone_value(z, s);
    let grad = zone_gradient(z, s);
    let a = [
        grad[0] * libm::cos(s.theta) + grad[1] * libm::sin(s.theta),
        grad[2],
    ];
    (a, -alpha_gain * h)
}

/// All constraint rows of a state against a zone set.
fn constraint_rows(
    s: &AgentState,
    zones: &[EngagementZone],
    alpha_gain: f64,
) -> Vec<([f64; 2], f64)> {
    zones.iter().map(|z| cbf_constraint_row(z, s, alpha_gain)).collect()
}

fn dot(a: &[f64; 2], u: &[f64; 2]) -> f64 {
    a[0] * u[0] + a[1] * u[1]
}

fn in_box(u: &[f64; 2], b: &InputBounds) -> bool {
    u[0] >= b.v_min - FEAS_EPS
        && u[0] <= b.v_max + FEAS_EPS
        && libm::fabs(u[1]) <= b.omega_max + FEAS_EPS
}

fn rows_hold(u: &[f64; 2], rows: &[([f64; 2], f64)]) -> bool {
    rows.iter().all(|(a, rhs)| dot(a, u) >= rhs - FEAS_EPS)
}

fn clamp_to_box(u: [f64; 2], b: &InputBounds) -> [f64; 2] {
    [
        u[0].max(b.v_min).min(b.v_max),
        u[1].max(-b.omega_max).min(b.omega_max),
    ]
}

/// Intersection of two lines `a1 . u = c1`, `a2 . u = c2`; `None` when
/// near-parallel.
fn line_intersection(a1: &[f64; 2], c1: f64, a2: &[f64; 2], c2: f64) -> Option<[f64; 2]> {
    let det = a1[0] * a2[1] - a1[1] * a2[0];
    let scale = (a1[0].abs() + a1[1].abs()) * (a2[0].abs() + a2[1].abs());
    if libm::fabs(det) <= 1e-14 * (1.0 + scale) {
        return None;
    }
    Some([
        (c1 * a2[1] - c2 * a1[1]) / det,
        (a1[0] * c2 - a2[0] * c1) / det,
    ])
}

/// Stage one: exact projection of `u_nom` onto the rows-and-box polygon.
///
/// The minimizer of a projection onto a convex polygon is the nominal
/// itself, the foot of a perpendicular onto one boundary line, or a vertex
/// where two boundaries meet; enumerating all of those and keeping the
/// feasible one closest to the nominal is exact. Returns `None` when no
/// candidate is feasible, which for this family means the polygon is
/// empty.
fn project_onto_polygon(
    u_nom: &[f64; 2],
    rows: &[([f64; 2], f64)],
    b: &InputBounds,
) -> Option<[f64; 2]> {
    if rows_hold(u_nom, rows) && in_box(u_nom, b) {
        return Some(*u_nom);
    }

    // Box faces as generic lines for the pairwise enumeration.
    let faces: [([f64; 2], f64); 4] = [
        ([1.0, 0.0], b.v_min),
        ([1.0, 0.0], b.v_max),
        ([0.0, 1.0], -b.omega_max),
        ([0.0, 1.0], b.omega_max),
    ];

    let mut best: Option<([f64; 2], f64)> = None;
    let mut consider = |u: [f64; 2]| {
        if !(u[0].is_finite() && u[1].is_finite()) {
            return;
        }
        if !(rows_hold(&u, rows) && in_box(&u, b)) {
            return;
        }
        let d = (u[0] - u_nom[0]) * (u[0] - u_nom[0]) + (u[1] - u_nom[1]) * (u[1] - u_nom[1]);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((u, d));
        }
    };

    // Feet of perpendiculars onto each row line and each box face.
    for (a, rhs) in rows {
        let nn = dot(a, a);
        if nn <= 1e-30 {
            continue;
        }
        let t = (rhs - dot(a, u_nom)) / nn;
        consider([u_nom[0] + t * a[0], u_nom[1] + t * a[1]]);
    }
    for (a, c) in &faces {
        let t = c - dot(a, u_nom);
        consider([u_nom[0] + t * a[0], u_nom[1] + t * a[1]]);
    }

    // Vertices: row x row, row x face, face x face.
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            if let Some(u) = line_intersection(&rows[i].0, rows[i].1, &rows[j].0, rows[j].1) {
                consider(u);
            }
        }
        for (a, c) in &faces {
            if let Some(u) = line_intersection(&rows[i].0, rows[i].1, a, *c) {
                consider(u);
            }
        }
    }
    consider([b.v_min, -b.omega_max]);
    consider([b.v_min, b.omega_max]);
    consider([b.v_max, -b.omega_max]);
    consider([b.v_max, b.omega_max]);

    best.map(|(u, _)| clamp_to_box(u, b))
}

/// Slack-eliminated stage-two objective: input deviation plus the weighted
/// squared hinge of every row shortfall.
fn relaxed_objective(u: &[f64; 2], u_nom: &[f64; 2], rows: &[([f64; 2], f64)], w: f64) -> f64 {
    let mut f = (u[0] - u_nom[0]) * (u[0] - u_nom[0]) + (u[1] - u_nom[1]) * (u[1] - u_nom[1]);
    for (a, rhs) in rows {
        let shortfall = (rhs - dot(a, u)).max(0.0);
        f += w * shortfall * shortfall;
    }
    f
}

/// Exact minimizer over the box of the quadratic that keeps the given
/// hinge pattern active: interior critical point if the box contains it,
/// otherwise the best of the four edge minimizers and four corners.
fn pattern_box_min(
    u_nom: &[f64; 2],
    rows: &[([f64; 2], f64)],
    pattern: &[bool],
    w: f64,
    b: &InputBounds,
) -> [f64; 2] {
    // q(u) = |u - u_nom|^2 + w * sum_P (rhs_j - a_j . u)^2
    // grad = 2 (u - u_nom) + 2 w sum_P a_j (a_j . u - rhs_j)
    let mut h11 = 1.0;
    let mut h12 = 0.0;
    let mut h22 = 1.0;
    let mut g1 = u_nom[0];
    let mut g2 = u_nom[1];
    for (j, (a, rhs)) in rows.iter().enumerate() {
        if !pattern[j] {
            continue;
        }
        h11 += w * a[0] * a[0];
        h12 += w * a[0] * a[1];
        h22 += w * a[1] * a[1];
        g1 += w * a[0] * rhs;
        g2 += w * a[1] * rhs;
    }
    // H u = g with H symmetric positive definite (identity plus rank-1 sums).
    let det = h11 * h22 - h12 * h12;
    let interior = [(g1 * h22 - g2 * h12) / det, (h11 * g2 - h12 * g1) / det];
    if in_box(&interior, b) {
        return clamp_to_box(interior, b);
    }

    let q = |u: &[f64; 2]| -> f64 {
        let du = [u[0] - u_nom[0], u[1] - u_nom[1]];
        let mut f = du[0] * du[0] + du[1] * du[1];
        for (j, (a, rhs)) in rows.iter().enumerate() {
            if pattern[j] {
                let r = rhs - dot(a, u);
                f += w * r * r;
            }
        }
        f
    };

    let mut best = [b.v_min, -b.omega_max];
    let mut best_q = q(&best);
    let mut consider = |u: [f64; 2]| {
        let v = q(&u);
        if v < best_q {
            best_q = v;
            best = u;
        }
    };
    // Edges: fix one coordinate, minimize the 1-D restriction, clamp.
    // d/du2 q(c, u2) = 2 h22 u2 + 2 h12 c - 2 g2.
    for v_fix in [b.v_min, b.v_max] {
        let u2 = ((g2 - h12 * v_fix) / h22).max(-b.omega_max).min(b.omega_max);
        consider([v_fix, u2]);
    }
    for w_fix in [-b.omega_max, b.omega_max] {
        let u1 = ((g1 - h12 * w_fix) / h11).max(b.v_min).min(b.v_max);
        consider([u1, w_fix]);
    }
    consider([b.v_min, b.omega_max]);
    consider([b.v_max, -b.omega_max]);
    consider([b.v_max, b.omega_max]);
    best
}

/// Exact minimum of the piecewise-quadratic relaxed objective along the
/// segment from `u0` to `u1` (both inside the box, hence so is the whole
/// segment).
fn segment_min(
    u0: &[f64; 2],
    u1: &[f64; 2],
    u_nom: &[f64; 2],
    rows: &[([f64; 2], f64)],
    w: f64,
) -> [f64; 2] {
    let d = [u1[0] - u0[0], u1[1] - u0[1]];
    let mut breaks: Vec<f64> = Vec::with_capacity(rows.len() + 2);
    breaks.push(0.0);
    breaks.push(1.0);
    for (a, rhs) in rows {
        let g = dot(a, &d);
        if libm::fabs(g) > 1e-30 {
            let t = (rhs - dot(a, u0)) / g;
            if t > 0.0 && t < 1.0 {
                breaks.push(t);
            }
        }
    }
    breaks.sort_by(|x, y| x.partial_cmp(y).expect("finite breakpoints"));

    let at = |t: f64| [u0[0] + t * d[0], u0[1] + t * d[1]];
    let mut best_t = 0.0;
    let mut best_f = relaxed_objective(u0, u_nom, rows, w);
    let mut consider = |t: f64, f: f64| {
        if f < best_f {
            best_f = f;
            best_t = t;
        }
    };
    for pair in breaks.windows(2) {
        let (ta, tb) = (pair[0], pair[1]);
        if tb - ta <= 1e-15 {
            continue;
        }
        let mid = at(0.5 * (ta + tb));
        // Pattern is constant on the open piece; assemble the 1-D quadratic
        // f(t) = alpha t^2 + beta t + const from the active rows at mid.
        let mut alpha = d[0] * d[0] + d[1] * d[1];
        let mut beta = 2.0 * (d[0] * (u0[0] - u_nom[0]) + d[1] * (u0[1] - u_nom[1]));
        for (a, rhs) in rows {
            if rhs - dot(a, &mid) > 0.0 {
                let g = dot(a, &d);
                let c = rhs - dot(a, u0);
                alpha += w * g * g;
                beta += -2.0 * w * c * g;
            }
        }
        let t_star = if alpha > 0.0 { (-0.5 * beta / alpha).max(ta).min(tb) } else { tb };
        for t in [t_star, tb] {
            let u = at(t);
            consider(t, relaxed_objective(&u, u_nom, rows, w));
        }
    }
    at(best_t)
}

/// Filters `u_nom` through the barrier constraints of every zone.
///
/// Stage one minimizes the squared deviation from the nominal subject to
/// every row and the input box; when that is infeasible, stage two relaxes
/// each row with a nonnegative slack and minimizes the weighted squared
/// slack norm plus the deviation (always feasible). Returns the input, the
/// slack 2-norm (zero in stage one), and whether stage one was feasible.
/// Deterministic, and exact up to floating-point rounding in both stages.
pub fn solve_cbf_qp(
    s: &AgentState,
    u_nom: &ControlInput,
    zones: &[EngagementZone],
    b: &InputBounds,
    cfg: &CbfConfig,
) -> (ControlInput, f64, bool) {
    let rows = constraint_rows(s, zones, cfg.alpha_gain);
    let nom = [u_nom.v, u_nom.omega];

    if let Some(u) = project_onto_polygon(&nom, &rows, b) {
        return (ControlInput::new(u[0], u[1]), 0.0, true);
    }

    // Stage two, with the slacks eliminated: for fixed input the optimal
    // slack of each row is exactly its shortfall, so minimize the smooth
    // hinge objective over the box by alternating exact pattern-quadratic
    // box solves with exact line searches; every step strictly descends,
    // and a fixed point is a global minimizer of this convex objective.
    let w = cfg.slack_weight;
    let mut u = clamp_to_box(nom, b);
    let max_iters = 8 + 4 * rows.len();
    for _ in 0..max_iters {
        let pattern: Vec<bool> = rows.iter().map(|(a, rhs)| rhs - dot(a, &u) > 0.0).collect();
        let target = pattern_box_min(&nom, &rows, &pattern, w, b);
        if libm::hypot(target[0] - u[0], target[1] - u[1]) < 1e-14 {
            break;
        }
        let stepped = segment_min(&u, &target, &nom, &rows, w);
        let f_old = relaxed_objective(&u, &nom, &rows, w);
        let f_new = relaxed_objective(&stepped, &nom, &rows, w);
        let improved = f_new < f_old - 1e-18;
        if !improved {
            break;
        }
        u = stepped;
    }

    let slack_sq: f64 = rows
        .iter()
        .map(|(a, rhs)| {
            let shortfall = (rhs - dot(a, &u)).max(0.0);
            shortfall * shortfall
        })
        .sum();
    let u = clamp_to_box(u, b);
    (ControlInput::new(u[0], u[1]), libm::sqrt(slack_sq), false)
}
