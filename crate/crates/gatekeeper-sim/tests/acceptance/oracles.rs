//! Numerical oracles for the acceptance suite.
//!
//! Each oracle recomputes a quantity the library obtains in closed form,
//! using an independent method that shares no code with the implementation
//! under test: classical RK4 for the flow, shooting with bisection for
//! shortest bounded-curvature paths, and dense-grid minimization for the
//! per-step barrier QP.

use gatekeeper_core::state::{AgentState, ControlInput, InputBounds};

const TAU: f64 = core::f64::consts::TAU;

/// Integrates the unicycle flow `(v cos th, v sin th, w)` with fixed-step
/// classical RK4, heading left unwrapped until the final state is built.
pub fn rk4_flow(x0: &AgentState, u: &ControlInput, duration: f64, step: f64) -> AgentState {
    let n = (duration / step).round() as usize;
    let (mut x, mut y, mut th) = (x0.x, x0.y, x0.theta);
    for _ in 0..n {
        let k1 = deriv(th, u);
        let k2 = deriv(th + 0.5 * step * k1.2, u);
        let k3 = deriv(th + 0.5 * step * k2.2, u);
        let k4 = deriv(th + step * k3.2, u);
        x += step / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        y += step / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        th += step / 6.0 * (k1.2 + 2.0 * k2.2 + 2.0 * k3.2 + k4.2);
    }
    AgentState::new(x, y, th)
}

fn deriv(theta: f64, u: &ControlInput) -> (f64, f64, f64) {
    (u.v * theta.cos(), u.v * theta.sin(), u.omega)
}

/// Shortest path length between two poses at the given turn radius, found
/// by shooting: for each of the six segment patterns the first arc angle
/// is swept over a full turn, sign changes of a geometric closure residual
/// are bisected to roots, and the shortest consistent path over all roots
/// and patterns wins. Returns `None` if no pattern closes, which cannot
/// happen for distinct poses and positive radius.
pub fn dubins_shooting_length(q0: &AgentState, q1: &AgentState, r: f64) -> Option<f64> {
    let mut best: Option<f64> = None;
    let mut take = |l: f64| {
        best = Some(best.map_or(l, |b: f64| b.min(l)));
    };
    for &(s1, s3) in &[(1.0, 1.0), (-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0)] {
        for a in roots(|a| csc_residual(q0, q1, r, s1, s3, a)) {
            if let Some(l) = csc_length(q0, q1, r, s1, s3, a) {
                take(l);
            }
        }
    }
    for &s in &[1.0, -1.0] {
        for a in roots(|a| ccc_residual(q0, q1, r, s, a)) {
            take(ccc_length(q0, q1, r, s, a));
        }
    }
    best
}

const SCAN_POINTS: usize = 4096;

/// All roots of `f` on `[0, TAU]` found by sign-change scanning plus
/// bisection. Tangential roots without a sign change are missed; random
/// acceptance instances make those measure zero, and arc-boundary
/// degeneracies are covered by a twin pattern whose root is transversal.
fn roots<F: Fn(f64) -> f64>(f: F) -> Vec<f64> {
    let h = TAU / SCAN_POINTS as f64;
    let mut out = Vec::new();
    let mut a_prev = 0.0;
    let mut f_prev = f(0.0);
    for i in 1..=SCAN_POINTS {
        let a = i as f64 * h;
        let fc = f(a);
        if f_prev == 0.0 {
            out.push(a_prev);
        } else if f_prev * fc < 0.0 {
            let (mut lo, mut hi, mut flo) = (a_prev, a, f_prev);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                let fm = f(mid);
                if fm == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if flo * fm < 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                    flo = fm;
                }
            }
            out.push(0.5 * (lo + hi));
        }
        a_prev = a;
        f_prev = fc;
    }
    if f_prev == 0.0 {
        out.push(a_prev);
    }
    out
}

/// Center of the turning circle tangent at `q`, direction `sigma`
/// (+1 left, -1 right).
fn turn_center(q: &AgentState, sigma: f64, r: f64) -> (f64, f64) {
    (q.x - sigma * r * q.theta.sin(), q.y + sigma * r * q.theta.cos())
}

fn rotate_about(c: (f64, f64), p: (f64, f64), ang: f64) -> (f64, f64) {
    let (s, co) = ang.sin_cos();
    let (dx, dy) = (p.0 - c.0, p.1 - c.1);
    (c.0 + co * dx - s * dy, c.1 + s * dx + co * dy)
}

fn mod_tau(a: f64) -> f64 {
    let m = a % TAU;
    if m < 0.0 {
        m + TAU
    } else {
        m
    }
}

/// Treats arc angles within 1e-6 of a full turn as zero: they arise when
/// the true arc is empty and the modulo landed on the far side.
fn snap_arc(a: f64) -> f64 {
    if a > TAU - 1e-6 {
        0.0
    } else {
        a
    }
}

/// Signed offset of the final arc's entry point from the straight line
/// leaving the first arc; zero exactly when the three segments chain up.
fn csc_residual(q0: &AgentState, q1: &AgentState, r: f64, s1: f64, s3: f64, a: f64) -> f64 {
    let c1 = turn_center(q0, s1, r);
    let p1 = rotate_about(c1, (q0.x, q0.y), s1 * a);
    let psi = q0.theta + s1 * a;
    let b = mod_tau(s3 * (q1.theta - psi));
    let c3 = turn_center(q1, s3, r);
    let p2 = rotate_about(c3, (q1.x, q1.y), -s3 * b);
    psi.cos() * (p2.1 - p1.1) - psi.sin() * (p2.0 - p1.0)
}

/// Path length at a residual root; `None` when the straight segment would
/// need negative length.
fn csc_length(q0: &AgentState, q1: &AgentState, r: f64, s1: f64, s3: f64, a: f64) -> Option<f64> {
    let c1 = turn_center(q0, s1, r);
    let p1 = rotate_about(c1, (q0.x, q0.y), s1 * a);
    let psi = q0.theta + s1 * a;
    let b = snap_arc(mod_tau(s3 * (q1.theta - psi)));
    let c3 = turn_center(q1, s3, r);
    let p2 = rotate_about(c3, (q1.x, q1.y), -s3 * b);
    let l = psi.cos() * (p2.0 - p1.0) + psi.sin() * (p2.1 - p1.1);
    if l < -1e-9 {
        return None;
    }
    Some(r * (a + b) + l.max(0.0))
}

/// First-arc exit point, middle-circle center, and exit heading of a
/// three-arc pattern with outer direction `s`.
fn ccc_middle(q0: &AgentState, r: f64, s: f64, a: f64) -> ((f64, f64), (f64, f64), f64) {
    let c1 = turn_center(q0, s, r);
    let p1 = rotate_about(c1, (q0.x, q0.y), s * a);
    let psi = q0.theta + s * a;
    let o2 = (p1.0 + s * r * psi.sin(), p1.1 - s * r * psi.cos());
    (o2, p1, psi)
}

/// Distance defect between the middle circle and the final circle; zero
/// exactly when the three arcs chain up.
fn ccc_residual(q0: &AgentState, q1: &AgentState, r: f64, s: f64, a: f64) -> f64 {
    let (o2, _, _) = ccc_middle(q0, r, s, a);
    let o3 = turn_center(q1, s, r);
    ((o2.0 - o3.0).powi(2) + (o2.1 - o3.1).powi(2)).sqrt() - 2.0 * r
}

/// Path length at a residual root: the middle and final arc angles follow
/// from the tangency geometry.
fn ccc_length(q0: &AgentState, q1: &AgentState, r: f64, s: f64, a: f64) -> f64 {
    let (o2, p1, psi) = ccc_middle(q0, r, s, a);
    let o3 = turn_center(q1, s, r);
    let t = (0.5 * (o2.0 + o3.0), 0.5 * (o2.1 + o3.1));
    let phi_s = (p1.1 - o2.1).atan2(p1.0 - o2.0);
    let phi_e = (t.1 - o2.1).atan2(t.0 - o2.0);
    let c = snap_arc(mod_tau(-s * (phi_e - phi_s)));
    let psi_t = psi - s * c;
    let b = snap_arc(mod_tau(s * (q1.theta - psi_t)));
    r * (a + c + b)
}

/// Dense-grid minimizer for `min |u - u_nom|^2` over the input box
/// intersected with the halfplanes `a_i . u >= b_i`: one sweep of the
/// whole box, then zoom passes around the incumbent. Returns the best
/// objective found, or `None` when the coarse sweep sees no feasible
/// point.
///
/// The objective is Euclidean in `(v, w)`, so every sweep is spaced
/// uniformly in Euclidean units on both axes. Per-axis counts would leave
/// the grid 100:1 anisotropic over the default box, and an incumbent
/// sliding along a constraint line that couples the axes would then sit
/// many speed cells away from the optimum while the zoom window shrinks
/// around it.
pub fn grid_qp_objective(u_nom: [f64; 2], rows: &[([f64; 2], f64)], b: &InputBounds) -> Option<f64> {
    let lo = [b.v_min, -b.omega_max];
    let hi = [b.v_max, b.omega_max];
    let mut best: Option<([f64; 2], f64)> = None;
    let mut cell = 0.01;
    sweep(u_nom, rows, lo, hi, cell, &mut best);
    best?;
    for _ in 0..7 {
        let c = best.expect("seeded by the coarse sweep").0;
        let half = 3.0 * cell;
        let wlo = [(c[0] - half).max(lo[0]), (c[1] - half).max(lo[1])];
        let whi = [(c[0] + half).min(hi[0]), (c[1] + half).min(hi[1])];
        cell *= 0.1;
        sweep(u_nom, rows, wlo, whi, cell, &mut best);
    }
    best.map(|(_, f)| f)
}

fn sweep(
    u_nom: [f64; 2],
    rows: &[([f64; 2], f64)],
    lo: [f64; 2],
    hi: [f64; 2],
    cell: f64,
    best: &mut Option<([f64; 2], f64)>,
) {
    let ni = ((hi[0] - lo[0]) / cell).ceil().max(1.0) as usize;
    let nj = ((hi[1] - lo[1]) / cell).ceil().max(1.0) as usize;
    for i in 0..=ni {
        let v = lo[0] + (hi[0] - lo[0]) * i as f64 / ni as f64;
        for j in 0..=nj {
            let w = lo[1] + (hi[1] - lo[1]) * j as f64 / nj as f64;
            if rows.iter().all(|(a, rhs)| a[0] * v + a[1] * w >= rhs - 1e-12) {
                let f = (v - u_nom[0]).powi(2) + (w - u_nom[1]).powi(2);
                if best.is_none_or(|(_, bf)| f < bf) {
                    *best = Some(([v, w], f));
                }
            }
        }
    }
}
