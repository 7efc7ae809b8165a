//! Shortest bounded-curvature paths between oriented poses.
//!
//! A path is one of six words (LSL, RSR, LSR, RSL, RLR, LRL) made of
//! minimum-radius arcs and a straight segment. The classification solves
//! each word in closed form in coordinates normalized by the turn radius
//! and keeps the shortest.
//!
//! Words describe geometry only. [`to_trajectory`] turns a word into an
//! executable sampled trajectory at a fixed speed: each sample cell gets
//! the word's exact average turn rate over that cell, and a three-parameter
//! correction spread across the whole path absorbs the leftover endpoint
//! error that appears when a segment boundary falls inside a cell. The
//! correction is zero for single-segment words and stays orders of
//! magnitude inside the input box when the radius has headroom over the
//! tightest admissible turn.

use alloc::vec::Vec;

use core::f64::consts::TAU;

use crate::state::{wrap_angle, AgentState, ControlInput, InputBounds};
use crate::trajectory::{propagate_exact, SampledTrajectory};
use crate::{Error, Result};

/// Pose tolerance under which two configurations count as coincident and
/// the shortest path degenerates to the empty word.
const COINCIDENT_POSE_TOLERANCE: f64 = 1e-12;

/// Endpoint pose residual required from a fitted trajectory. Well inside
/// the 1e-6 contract so downstream joins can treat the endpoint as exact.
const FIT_RESIDUAL_TARGET: f64 = 1e-9;

/// The six Dubins words, in canonical tie-break order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum WordKind {
    /// Left arc, straight, left arc.
    Lsl,
    /// Right arc, straight, right arc.
    Rsr,
    /// Left arc, straight, right arc.
    Lsr,
    /// Right arc, straight, left arc.
    Rsl,
    /// Right arc, left arc, right arc.
    Rlr,
    /// Left arc, right arc, left arc.
    Lrl,
}

impl WordKind {
    /// All words in tie-break order.
    pub const ALL: [WordKind; 6] = [
        WordKind::Lsl,
        WordKind::Rsr,
        WordKind::Lsr,
        WordKind::Rsl,
        WordKind::Rlr,
        WordKind::Lrl,
    ];

    /// Turn direction of each segment: +1 left, -1 right, 0 straight.
    pub fn segment_turns(&self) -> [i8; 3] {
        match self {
            WordKind::Lsl => [1, 0, 1],
            WordKind::Rsr => [-1, 0, -1],
            WordKind::Lsr => [1, 0, -1],
            WordKind::Rsl => [-1, 0, 1],
            WordKind::Rlr => [-1, 1, -1],
            WordKind::Lrl => [1, -1, 1],
        }
    }
}

/// A solved path word: three segment lengths at a fixed turn radius.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DubinsWord {
    kind: WordKind,
    segments: [f64; 3],
    radius: f64,
}

impl DubinsWord {
    /// Builds a word, validating nonnegative segment lengths and a positive
    /// radius.
    pub fn new(kind: WordKind, segments: [f64; 3], radius: f64) -> Result<Self> {
        if !(segments.iter().all(|s| s.is_finite()) && radius.is_finite()) {
            return Err(Error::NonFinite);
        }
        if segments.iter().any(|&s| s < 0.0) || radius <= 0.0 {
            return Err(Error::InvalidDuration(radius));
        }
        Ok(Self { kind, segments, radius })
    }

    /// Word type.
    pub fn kind(&self) -> WordKind {
        self.kind
    }

    /// Segment lengths, in length units.
    pub fn segments(&self) -> [f64; 3] {
        self.segments
    }

    /// Turn radius the word was solved for.
    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Sum of segment lengths.
    pub fn total_length(&self) -> f64 {
        self.segments[0] + self.segments[1] + self.segments[2]
    }
}

fn mod2pi(theta: f64) -> f64 {
    let r = theta % TAU;
    if r < 0.0 {
        r + TAU
    } else {
        r
    }
}

/// Endpoint geometry normalized by the turn radius, shared by all six
/// word solvers.
struct Normalized {
    alpha: f64,
    beta: f64,
    d: f64,
    sa: f64,
    sb: f64,
    ca: f64,
    cb: f64,
    c_ab: f64,
}

impl Normalized {
    fn new(q0: &AgentState, q1: &AgentState, radius: f64) -> Self {
        let dx = q1.x - q0.x;
        let dy = q1.y - q0.y;
        let d = libm::hypot(dx, dy) / radius;
        let theta = mod2pi(libm::atan2(dy, dx));
        let alpha = mod2pi(q0.theta - theta);
        let beta = mod2pi(q1.theta - theta);
        Self {
            alpha,
            beta,
            d,
            sa: libm::sin(alpha),
            sb: libm::sin(beta),
            ca: libm::cos(alpha),
            cb: libm::cos(beta),
            c_ab: libm::cos(alpha - beta),
        }
    }

    /// Normalized segment parameters for one word, when that word exists
    /// for this geometry.
    fn solve(&self, kind: WordKind) -> Option<[f64; 3]> {
        let (alpha, beta, d) = (self.alpha, self.beta, self.d);
        let (sa, sb, ca, cb, c_ab) = (self.sa, self.sb, self.ca, self.cb, self.c_ab);
        match kind {
            WordKind::Lsl => {
                let p_sq = 2.0 * d * (sa - sb) + 2.0 + d * d - 2.0 * c_ab;
                if p_sq < 0.0 {
                    return None;
                }
                let tmp = libm::atan2(cb - ca, d + sa - sb);
                Some([mod2pi(tmp - alpha), libm::sqrt(p_sq), mod2pi(beta - tmp)])
            }
            WordKind::Rsr => {
                let p_sq = 2.0 * d * (sb - sa) + 2.0 + d * d - 2.0 * c_ab;
                if p_sq < 0.0 {
                    return None;
                }
                let tmp = libm::atan2(ca - cb, d - sa + sb);
                Some([mod2pi(alpha - tmp), libm::sqrt(p_sq), mod2pi(tmp - beta)])
            }
            WordKind::Lsr => {
                let p_sq = 2.0 * d * (sa + sb) + 2.0 * c_ab - 2.0 + d * d;
                if p_sq < 0.0 {
                    return None;
                }
                let p = libm::sqrt(p_sq);
                let tmp =
                    libm::atan2(-ca - cb, d + sa + sb) - libm::atan2(-2.0, p);
                Some([mod2pi(tmp - alpha), p, mod2pi(tmp - beta)])
            }
            WordKind::Rsl => {
                let p_sq = 2.0 * c_ab - 2.0 + d * d - 2.0 * d * (sa + sb);
                if p_sq < 0.0 {
                    return None;
                }
                let p = libm::sqrt(p_sq);
                let tmp = libm::atan2(ca + cb, d - sa - sb) - libm::atan2(2.0, p);
                Some([mod2pi(alpha - tmp), p, mod2pi(beta - tmp)])
            }
            WordKind::Rlr => {
                let tmp = (2.0 * d * (sa - sb) + 2.0 * c_ab + 6.0 - d * d) / 8.0;
                if libm::fabs(tmp) > 1.0 {
                    return None;
                }
                let p = mod2pi(TAU - libm::acos(tmp));
                let phi = libm::atan2(ca - cb, d - sa + sb);
                let t = mod2pi(alpha - phi + mod2pi(p / 2.0));
                Some([t, p, mod2pi(alpha - beta - t + mod2pi(p))])
            }
            WordKind::Lrl => {
                let tmp = (2.0 * d * (sb - sa) + 2.0 * c_ab + 6.0 - d * d) / 8.0;
                if libm::fabs(tmp) > 1.0 {
                    return None;
                }
                let p = mod2pi(TAU - libm::acos(tmp));
                let phi = libm::atan2(ca - cb, d + sa - sb);
                let t = mod2pi(-alpha - phi + p / 2.0);
                Some([t, p, mod2pi(beta - alpha - t + mod2pi(p))])
            }
        }
    }
}

/// Solves the shortest path from `q0` to `q1` at the given turn radius.
///
/// All six words are tried; the minimum-length one wins, with exact-length
/// ties going to the earliest word in [`WordKind::ALL`] order, so
/// degenerate geometries resolve deterministically. A path always exists,
/// so the only error is a nonpositive or non-finite radius.
pub fn shortest_path(q0: &AgentState, q1: &AgentState, radius: f64) -> Result<DubinsWord> {
    if !(radius.is_finite() && q0.is_finite() && q1.is_finite()) {
        return Err(Error::NonFinite);
    }
    if radius <= 0.0 {
        return Err(Error::InvalidDuration(radius));
    }
    if q0.pose_distance(q1) < COINCIDENT_POSE_TOLERANCE {
        // The classification assumes a nonzero displacement direction and
        // would manufacture a full loop here.
        return DubinsWord::new(WordKind::Lsl, [0.0; 3], radius);
    }
    let geom = Normalized::new(q0, q1, radius);
    let mut best: Option<(f64, WordKind, [f64; 3])> = None;
    for kind in WordKind::ALL {
        if let Some(params) = geom.solve(kind) {
            let len = params[0] + params[1] + params[2];
            if best.is_none_or(|(l, _, _)| len < l) {
                best = Some((len, kind, params));
            }
        }
    }
    let (_, kind, params) = best.expect("CSC words exist for every geometry");
    DubinsWord::new(
        kind,
        [params[0] * radius, params[1] * radius, params[2] * radius],
        radius,
    )
}

/// Smallest turn radius achievable at the lowest admissible speed.
///
/// Only bounded inputs are supported: [`InputBounds`] construction rejects
/// non-finite turn rates, so the degenerate zero-radius limit cannot arise.
pub fn min_turn_radius(b: &InputBounds) -> f64 {
    b.v_min / b.omega_max
}

/// Pose on the word at arc length `s` from `q0`, clamped to the word's
/// length. Exact: arcs and lines are propagated in closed form.
pub fn sample_word(word: &DubinsWord, q0: &AgentState, s: f64) -> AgentState {
    let mut remaining = s.clamp(0.0, word.total_length());
    let mut pose = *q0;
    let turns = word.kind.segment_turns();
    for (len, turn) in word.segments.iter().zip(turns) {
        if remaining <= 0.0 {
            break;
        }
        let step = remaining.min(*len);
        if step > 0.0 {
            // Unit speed makes duration equal arc length.
            let u = ControlInput::new(1.0, f64::from(turn) / word.radius);
            pose = propagate_exact(&pose, &u, step).expect("finite word geometry");
        }
        remaining -= step;
    }
    pose
}

/// Signed heading change of the word between arc lengths `s0` and `s1`,
/// accumulated exactly from the segment pieces the interval covers.
fn heading_change(word: &DubinsWord, s0: f64, s1: f64) -> f64 {
    let turns = word.kind.segment_turns();
    let mut lo_bound = 0.0;
    let mut total = 0.0;
    for (len, turn) in word.segments.iter().zip(turns) {
        let hi_bound = lo_bound + len;
        let lo = s0.max(lo_bound);
        let hi = s1.min(hi_bound);
        if hi > lo && turn != 0 {
            total += f64::from(turn) * (hi - lo) / word.radius;
        }
        lo_bound = hi_bound;
    }
    total
}

/// Segment index containing the closed interval `[s0, s1]`, if one does.
fn containing_segment(word: &DubinsWord, s0: f64, s1: f64) -> Option<usize> {
    let mut lo = 0.0;
    for (j, len) in word.segments.iter().enumerate() {
        let hi = lo + len;
        if s0 >= lo && s1 <= hi {
            return Some(j);
        }
        lo = hi;
    }
    None
}

fn endpoint_residual(reached: &AgentState, target: &AgentState) -> f64 {
    reached.pose_distance(target)
}

fn propagate_cells(
    q0: &AgentState,
    cells: &[ControlInput],
    dt: f64,
) -> Result<AgentState> {
    let mut pose = *q0;
    for u in cells {
        pose = propagate_exact(&pose, u, dt)?;
    }
    Ok(pose)
}

#[allow(clippy::needless_range_loop)]
fn solve_3x3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        if a[pivot][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in (col + 1)..3 {
            let factor = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut acc = b[row];
        for k in (row + 1)..3 {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

/// Fits `n` constant-input cells of duration `dt` at speed `v` that follow
/// the word from `q0` and land exactly on its endpoint.
///
/// Cells fully inside one segment carry the segment's exact input; cells
/// straddling a boundary carry the exact average turn rate, which keeps
/// every cell-boundary heading exact and leaves only a small position
/// residual. A Gauss-Newton iteration on a few smooth input-shape
/// parameters ([`polish_cells`]) then drives the endpoint residual to
/// [`FIT_RESIDUAL_TARGET`].
pub(crate) fn fit_word_cells(
    word: &DubinsWord,
    q0: &AgentState,
    v: f64,
    n: usize,
    dt: f64,
    bounds: &InputBounds,
) -> Result<Vec<ControlInput>> {
    let total = word.total_length();
    let ds = v * dt;
    if libm::fabs(ds * n as f64 - total) > 1e-9 * (1.0 + total) {
        return Err(Error::ConnectorFit);
    }
    let target = sample_word(word, q0, total);
    let turns = word.kind.segment_turns();

    let mut cells = Vec::with_capacity(n);
    for i in 0..n {
        let s0 = i as f64 * ds;
        let s1 = if i + 1 == n { total } else { (i + 1) as f64 * ds };
        let omega = match containing_segment(word, s0, s1) {
            // Exact segment input, no accumulated division error.
            Some(j) => f64::from(turns[j]) * v / word.radius,
            None => heading_change(word, s0, s1) / dt,
        };
        cells.push(ControlInput::new(v, omega));
    }

    let residual_of = |cells: &[ControlInput]| -> Result<f64> {
        Ok(endpoint_residual(&propagate_cells(q0, cells, dt)?, &target))
    };

    if residual_of(&cells)? > FIT_RESIDUAL_TARGET {
        // Turn-rate shaping alone cannot move the endpoint along the path
        // tangent (arc length is speed-controlled), so when it stalls, as
        // on straight-dominated words, retry with a uniform speed offset
        // in the knob set. Failed attempts leave the seed untouched.
        if polish_cells(&mut cells, q0, &target, dt, false).is_err() {
            polish_cells(&mut cells, q0, &target, dt, true)?;
        }
    }

    for u in &cells {
        if !bounds.contains(u) {
            return Err(Error::ConnectorFit);
        }
    }
    Ok(cells)
}

/// Gauss-Newton iteration on smooth input-shape parameters that zeroes the
/// endpoint pose error.
///
/// The knobs are turn-rate shapes (constant, linear, and quadratic in the
/// cell index) plus, when `use_speed` is set, a uniform speed offset. The
/// normal-equation solve is damped so a knob that happens to be null for
/// the current geometry (the quadratic shape on straight-dominated words,
/// the speed offset on closed loops) degrades gracefully instead of
/// steering the step. On failure `cells` is left untouched.
fn polish_cells(
    cells: &mut [ControlInput],
    q0: &AgentState,
    target: &AgentState,
    dt: f64,
    use_speed: bool,
) -> Result<()> {
    const MAX_KNOBS: usize = 4;
    let n = cells.len();
    let knobs = if use_speed { 4 } else { 3 };
    let shape = |i: usize| -> [f64; 3] {
        let c = (i as f64 + 0.5) / n as f64 - 0.5;
        [1.0, c, c * c - 1.0 / 12.0]
    };
    let apply = |lambda: &[f64; MAX_KNOBS], out: &mut Vec<ControlInput>| {
        out.clear();
        for (i, u) in cells.iter().enumerate() {
            let b = shape(i);
            let omega = u.omega + lambda[0] * b[0] + lambda[1] * b[1] + lambda[2] * b[2];
            out.push(ControlInput::new(u.v + lambda[3], omega));
        }
    };
    let error_vec =
        |lambda: &[f64; MAX_KNOBS], scratch: &mut Vec<ControlInput>| -> Result<[f64; 3]> {
            apply(lambda, scratch);
            let end = propagate_cells(q0, scratch, dt)?;
            Ok([end.x - target.x, end.y - target.y, wrap_angle(end.theta - target.theta)])
        };
    let norm = |e: &[f64; 3]| libm::hypot(libm::hypot(e[0], e[1]), e[2]);

    let mut lambda = [0.0_f64; MAX_KNOBS];
    let mut scratch = Vec::with_capacity(n);
    let fd_eps = 1e-7;
    for _ in 0..20 {
        let f0 = error_vec(&lambda, &mut scratch)?;
        let r0 = norm(&f0);
        if r0 <= FIT_RESIDUAL_TARGET * 0.1 {
            break;
        }
        let mut jac = [[0.0; MAX_KNOBS]; 3];
        for k in 0..knobs {
            let mut bumped = lambda;
            bumped[k] += fd_eps;
            let fk = error_vec(&bumped, &mut scratch)?;
            for row in 0..3 {
                jac[row][k] = (fk[row] - f0[row]) / fd_eps;
            }
        }
        // Damped minimum-norm step: delta = J^T (J J^T + eps I)^{-1} (-f0).
        let mut gram = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                gram[r][c] = (0..knobs).map(|k| jac[r][k] * jac[c][k]).sum();
            }
        }
        let damping = 1e-10 * (1.0 + gram[0][0] + gram[1][1] + gram[2][2]);
        for (r, row) in gram.iter_mut().enumerate() {
            row[r] += damping;
        }
        let Some(dual) = solve_3x3(gram, [-f0[0], -f0[1], -f0[2]]) else {
            return Err(Error::ConnectorFit);
        };
        let mut delta = [0.0; MAX_KNOBS];
        for (k, d) in delta.iter_mut().enumerate().take(knobs) {
            *d = (0..3).map(|r| jac[r][k] * dual[r]).sum();
        }
        let mut step = 1.0;
        let mut advanced = false;
        for _ in 0..6 {
            let mut trial = lambda;
            for k in 0..knobs {
                trial[k] += step * delta[k];
            }
            if norm(&error_vec(&trial, &mut scratch)?) < r0 {
                lambda = trial;
                advanced = true;
                break;
            }
            step *= 0.5;
        }
        if !advanced {
            break;
        }
    }
    let f_final = error_vec(&lambda, &mut scratch)?;
    if norm(&f_final) > FIT_RESIDUAL_TARGET {
        return Err(Error::ConnectorFit);
    }
    apply(&lambda, &mut scratch);
    cells.copy_from_slice(&scratch);
    Ok(())
}

/// Realizes a word as a sampled trajectory flown at constant speed `v`
/// starting at `t_start`.
///
/// The sample spacing is `duration / n` with `n` chosen so the spacing
/// never exceeds `dt`; the whole word then fits an integer number of cells
/// and the final state lands on the word's endpoint within 1e-6 (in
/// practice far tighter, see [`fit_word_cells`]). Words at exactly the
/// minimum admissible radius can be rejected when a boundary correction
/// would push an input outside the box; give the radius headroom.
pub fn to_trajectory(
    word: &DubinsWord,
    q0: &AgentState,
    t_start: f64,
    v: f64,
    dt: f64,
    bounds: &InputBounds,
) -> Result<SampledTrajectory> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidDuration(dt));
    }
    if v < bounds.v_min || v > bounds.v_max {
        return Err(Error::InvalidBounds);
    }
    let required = v / bounds.omega_max;
    if word.radius < required * (1.0 - 1e-12) {
        return Err(Error::InadmissibleTurn { radius: word.radius, required });
    }
    let total = word.total_length();
    if total <= COINCIDENT_POSE_TOLERANCE {
        return SampledTrajectory::from_inputs(t_start, dt, *q0, Vec::new());
    }
    let duration = total / v;
    let ratio = duration / dt;
    let n = if libm::fabs(ratio - libm::round(ratio)) < 1e-9 {
        libm::round(ratio) as usize
    } else {
        libm::ceil(ratio) as usize
    }
    .max(1);
    let dt_cell = duration / n as f64;
    let cells = fit_word_cells(word, q0, v, n, dt_cell, bounds)?;
    SampledTrajectory::from_inputs(t_start, dt_cell, *q0, cells)
}
