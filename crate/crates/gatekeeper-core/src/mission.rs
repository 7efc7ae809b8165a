//! Leader path planning, formation offset curves, and the tracking and
//! backup controllers.
//!
//! The leader path doubles as the backup set: any agent that reaches a
//! point of the path can follow the recorded input stream from there and
//! remain on it, and therefore safe, for all future time. Past the path's
//! final sample the path continues on a terminal loiter circle at the
//! minimum turn radius, which closes the "for all future time" guarantee a
//! finite path would leave open; scenario loading must keep the goal
//! region clear of zones by at least the loiter diameter.
//!
//! Followers fly offset curves: the leader path shifted along its normal
//! (lateral) and along its arc length (longitudinal). Nominal trajectories
//! are produced by forward-propagating a saturated kinematic tracking
//! controller against the offset curve, so they are dynamically feasible
//! with admissible inputs by construction.

use alloc::vec::Vec;

use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dubins::{fit_word_cells, min_turn_radius, sample_word, shortest_path, DubinsWord};
use crate::state::{wrap_angle, AgentState, ControlInput, InputBounds};
use crate::trajectory::{propagate_exact, SampledTrajectory, FEASIBILITY_TOLERANCE};
use crate::zones::SafeSet;
use crate::{Error, Result};

/// Formation offset of a follower relative to the leader path: `lateral`
/// along the path's left normal, `longitudinal` along its arc length.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FormationOffset {
    /// Signed perpendicular offset, LU; positive is left of the path.
    pub lateral: f64,
    /// Signed along-path offset, LU; negative trails the leader.
    pub longitudinal: f64,
}

impl FormationOffset {
    /// Builds an offset, rejecting non-finite components.
    pub fn new(lateral: f64, longitudinal: f64) -> Result<Self> {
        if !(lateral.is_finite() && longitudinal.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { lateral, longitudinal })
    }
}

/// Gains of the kinematic tracking law in [`tracking_control`].
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrackingGains {
    /// Forward-error gain on speed, 1/TU.
    pub k_x: f64,
    /// Cross-track gain on turn rate, 1/LU^2 scaled by reference speed.
    pub k_y: f64,
    /// Heading gain on turn rate, 1/LU scaled by reference speed.
    pub k_theta: f64,
}

impl Default for TrackingGains {
    fn default() -> Self {
        // Chosen so the linearized lateral loop at cruise speed decays at
        // least two decades per 2 TU: poles -v(k_theta/2 +- sqrt(...)),
        // underdamped for k_y > k_theta^2/4.
        Self { k_x: 3.0, k_y: 12.0, k_theta: 6.0 }
    }
}

/// Saturated kinematic pose-tracking law.
///
/// The pose error is expressed in the reference frame; speed responds to
/// the forward error and turn rate to the cross-track and heading errors,
/// scaled by the reference speed. Outputs are clamped into `b`, so the
/// returned input is always admissible.
pub fn tracking_control(
    s: &AgentState,
    ref_state: &AgentState,
    ref_input: &ControlInput,
    b: &InputBounds,
    g: &TrackingGains,
) -> ControlInput {
    let dx = ref_state.x - s.x;
    let dy = ref_state.y - s.y;
    let (sin_t, cos_t) = (libm::sin(ref_state.theta), libm::cos(ref_state.theta));
    let e_x = cos_t * dx + sin_t * dy;
    let e_y = -sin_t * dx + cos_t * dy;
    let e_theta = wrap_angle(ref_state.theta - s.theta);
    let v = ref_input.v + g.k_x * e_x;
    let omega = ref_input.omega + ref_input.v * (g.k_y * e_y + g.k_theta * libm::sin(e_theta));
    b.clamp(ControlInput::new(v, omega))
}

/// The leader's planned trajectory plus its cumulative arc length and the
/// terminal loiter rule. Immutable once built; this is the backup set.
#[derive(Clone, Debug, PartialEq)]
pub struct LeaderPath {
    trajectory: SampledTrajectory,
    arclength: Vec<f64>,
    loiter: ControlInput,
}

impl LeaderPath {
    /// Wraps a trajectory as a leader path after validating it end to end:
    /// dynamical feasibility, admissible inputs, and safety of every
    /// sample. The loiter input turns at the tightest admissible circle,
    /// `(v_min, +omega_max)`.
    pub fn new(trajectory: SampledTrajectory, ss: &SafeSet, b: &InputBounds) -> Result<Self> {
        if trajectory.is_empty() || trajectory.len() < 2 {
            return Err(Error::EmptyTrajectory);
        }
        let residual = trajectory.max_propagation_residual()?;
        if residual > FEASIBILITY_TOLERANCE {
            return Err(Error::InfeasibleTrajectory(residual));
        }
        for (i, u) in trajectory.inputs().iter().enumerate() {
            if !b.contains(u) {
                return Err(Error::InvalidLeaderPath(trajectory.time(i)));
            }
        }
        for i in 0..trajectory.len() {
            if !ss.state_safe(trajectory.time(i), &trajectory.state(i)) {
                return Err(Error::InvalidLeaderPath(trajectory.time(i)));
            }
        }
        let dt = trajectory.dt();
        let mut arclength = Vec::with_capacity(trajectory.len());
        let mut s = 0.0;
        arclength.push(0.0);
        for u in trajectory.inputs() {
            // Speed is constant over the cell, so cell arc length is exact.
            s += u.v * dt;
            arclength.push(s);
        }
        let loiter = ControlInput::new(b.v_min, b.omega_max);
        Ok(Self { trajectory, arclength, loiter })
    }

    /// The underlying sampled trajectory.
    pub fn trajectory(&self) -> &SampledTrajectory {
        &self.trajectory
    }

    /// The input held forever past the final sample.
    pub fn loiter_input(&self) -> ControlInput {
        self.loiter
    }

    /// First path parameter (the trajectory start time).
    pub fn start_param(&self) -> f64 {
        self.trajectory.start_time()
    }

    /// Last explicitly sampled path parameter.
    pub fn end_param(&self) -> f64 {
        self.trajectory.end_time()
    }

    /// Total arc length of the explicit path (loiter excluded).
    pub fn total_arclength(&self) -> f64 {
        *self.arclength.last().expect("validated non-empty")
    }

    /// Recorded input at parameter `tau`; piecewise constant over cells,
    /// loiter past the end. Parameters before the start clamp to the first
    /// cell.
    pub fn input_at(&self, tau: f64) -> ControlInput {
        let t0 = self.trajectory.start_time();
        let dt = self.trajectory.dt();
        if tau >= self.end_param() - 1e-9 * dt {
            return self.loiter;
        }
        let idx = libm::floor(((tau - t0) / dt).max(0.0) + 1e-9) as usize;
        self.trajectory.input(idx.min(self.trajectory.inputs().len() - 1))
    }

    /// Exact state at parameter `tau`, extended along the loiter circle
    /// past the end of the path. Parameters before the start clamp.
    pub fn state_at(&self, tau: f64) -> AgentState {
        let t0 = self.trajectory.start_time();
        let dt = self.trajectory.dt();
        let end = self.end_param();
        if tau <= t0 {
            return self.trajectory.state(0);
        }
        if tau >= end {
            let excess = tau - end;
            return propagate_exact(&self.trajectory.end_state(), &self.loiter, excess)
                .expect("loiter propagation from a finite state");
        }
        let ratio = (tau - t0) / dt;
        let idx = (libm::floor(ratio + 1e-9) as usize).min(self.trajectory.len() - 2);
        let frac = tau - self.trajectory.time(idx);
        if frac <= 0.0 {
            return self.trajectory.state(idx);
        }
        propagate_exact(&self.trajectory.state(idx), &self.trajectory.input(idx), frac)
            .expect("within-cell propagation of a validated path")
    }

    /// Cumulative arc length at parameter `tau`, continuing at loiter speed
    /// past the end.
    pub fn arclength_at(&self, tau: f64) -> f64 {
        let t0 = self.trajectory.start_time();
        let dt = self.trajectory.dt();
        let end = self.end_param();
        if tau <= t0 {
            return 0.0;
        }
        if tau >= end {
            return self.total_arclength() + self.loiter.v * (tau - end);
        }
        let ratio = (tau - t0) / dt;
        let idx = (libm::floor(ratio + 1e-9) as usize).min(self.trajectory.len() - 2);
        let frac = tau - self.trajectory.time(idx);
        self.arclength[idx] + self.trajectory.input(idx).v * frac.max(0.0)
    }

    /// Parameter whose arc length equals `s` (inverse of
    /// [`Self::arclength_at`]); clamps at the start, extends on the loiter
    /// circle past the end.
    pub fn param_at_arclength(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return self.start_param();
        }
        let total = self.total_arclength();
        if s >= total {
            return self.end_param() + (s - total) / self.loiter.v;
        }
        // partition_point: first sample whose cumulative length exceeds s.
        let hi = self.arclength.partition_point(|&a| a <= s);
        let idx = hi.saturating_sub(1).min(self.trajectory.len() - 2);
        let v = self.trajectory.input(idx).v;
        self.trajectory.time(idx) + (s - self.arclength[idx]) / v
    }

    /// Parameter of the sample nearest to `p` by position, earliest on
    /// ties. Sample-resolution projection used to seed join-point searches.
    pub fn nearest_param(&self, p: &AgentState) -> f64 {
        let mut best = (f64::INFINITY, 0usize);
        for i in 0..self.trajectory.len() {
            let d = self.trajectory.state(i).position_distance(p);
            if d < best.0 {
                best = (d, i);
            }
        }
        self.trajectory.time(best.1)
    }

    /// Reference pose and feedforward input of the offset curve at time
    /// `t`: the path pose at the arc length shifted by `off.longitudinal`,
    /// displaced by `off.lateral` along the left normal.
    ///
    /// Negative shifted arc lengths extend the start pose backward along
    /// its heading. A reference parked at the path start would not be
    /// trackable with `v_min > 0`; the extension keeps the reference
    /// moving at leader speed from the first instant, so a trailing
    /// follower that starts on its offset curve stays on it.
    pub fn desired_pose(&self, off: &FormationOffset, t: f64) -> (AgentState, ControlInput) {
        let s = self.arclength_at(t) + off.longitudinal;
        let (base, u) = if s < 0.0 {
            let start = self.trajectory.state(0);
            let u0 = self.trajectory.input(0);
            let pose = AgentState::new(
                start.x + s * libm::cos(start.theta),
                start.y + s * libm::sin(start.theta),
                start.theta,
            );
            (pose, ControlInput::new(u0.v, 0.0))
        } else {
            let tau = self.param_at_arclength(s);
            (self.state_at(tau), self.input_at(tau))
        };
        let pose = AgentState::new(
            base.x - off.lateral * libm::sin(base.theta),
            base.y + off.lateral * libm::cos(base.theta),
            base.theta,
        );
        (pose, u)
    }
}

/// Replays the leader's input stream for an agent that joined the path at
/// parameter `join_param` at time `join_time`: at time `t` the recorded
/// input at parameter `join_param + (t - join_time)` applies, with the
/// terminal loiter rule past the path end. Errors when `t < join_time`.
pub fn backup_controller(
    lp: &LeaderPath,
    t: f64,
    join_time: f64,
    join_param: f64,
) -> Result<ControlInput> {
    if !(t.is_finite() && join_time.is_finite() && join_param.is_finite()) {
        return Err(Error::NonFinite);
    }
    if t < join_time - 1e-12 {
        return Err(Error::DomainMismatch { start: join_time, end: t });
    }
    Ok(lp.input_at(join_param + (t - join_time)))
}

/// Forward-propagates the tracking controller against the offset curve of
/// `lp`, producing the follower's nominal trajectory over
/// `[t_k, t_k + horizon]` from its current state `x_k`.
///
/// The result is dynamically feasible with admissible inputs regardless of
/// how aggressive the offset curve is: the controller saturates and the
/// tracking error simply grows where the curve is not followable.
#[allow(clippy::too_many_arguments)]
pub fn offset_nominal(
    lp: &LeaderPath,
    off: &FormationOffset,
    x_k: &AgentState,
    t_k: f64,
    horizon: f64,
    dt: f64,
    b: &InputBounds,
    g: &TrackingGains,
) -> Result<SampledTrajectory> {
    if !(horizon.is_finite() && horizon > 0.0 && dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidDuration(horizon.min(dt)));
    }
    let steps = libm::round(horizon / dt).max(1.0) as usize;
    let mut inputs = Vec::with_capacity(steps);
    let mut x = *x_k;
    for i in 0..steps {
        let t = t_k + i as f64 * dt;
        let (ref_state, ref_input) = lp.desired_pose(off, t);
        let u = tracking_control(&x, &ref_state, &ref_input, b, g);
        x = propagate_exact(&x, &u, dt)?;
        inputs.push(u);
    }
    SampledTrajectory::from_inputs(t_k, dt, *x_k, inputs)
}

/// Parameters of the leader path planner.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlannerConfig {
    /// Sample period of the produced trajectory, TU.
    pub dt: f64,
    /// The trajectory is loiter-padded to cover at least this duration, TU.
    pub min_duration: f64,
    /// Steering turn radius, LU; keep headroom above the tightest
    /// admissible turn so fitted words stay admissible.
    pub turn_radius: f64,
    /// Target speed when realizing words, LU/TU.
    pub cruise_speed: f64,
    /// Sampling iterations of the tree search.
    pub iterations: usize,
    /// Probability of sampling the goal pose instead of a random pose.
    pub goal_bias: f64,
    /// Neighborhood radius (path length, LU) for parent choice and rewiring.
    pub neighbor_radius: f64,
    /// Lower corner of the pose sampling box, LU.
    pub sample_min: (f64, f64),
    /// Upper corner of the pose sampling box, LU.
    pub sample_max: (f64, f64),
    /// Arc-length spacing of geometric collision checks, LU.
    pub collision_step: f64,
    /// Extra clearance demanded during planning on top of the safe-set
    /// margin; must dominate the collision-step sagitta plus the word
    /// fitting and execution quantization errors.
    pub clearance_buffer: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            dt: 0.005,
            min_duration: 0.0,
            turn_radius: 0.2,
            cruise_speed: 0.9,
            iterations: 600,
            goal_bias: 0.1,
            neighbor_radius: 1.5,
            sample_min: (-2.0, -2.0),
            sample_max: (12.0, 2.0),
            collision_step: 0.02,
            clearance_buffer: 0.005,
        }
    }
}

impl PlannerConfig {
    fn validate(&self, b: &InputBounds) -> Result<()> {
        let ok = self.dt > 0.0
            && self.min_duration >= 0.0
            && self.turn_radius >= min_turn_radius(b)
            && self.cruise_speed >= b.v_min
            && self.cruise_speed <= b.v_max
            && self.iterations > 0
            && (0.0..1.0).contains(&self.goal_bias)
            && self.neighbor_radius > 0.0
            && self.sample_min.0 < self.sample_max.0
            && self.sample_min.1 < self.sample_max.1
            && self.collision_step > 0.0
            && self.clearance_buffer >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig)
        }
    }
}

/// Checks a word geometrically against the safe set at arc-length steps of
/// `cfg.collision_step`, demanding `margin + cfg.clearance_buffer`.
fn word_safe(
    word: &DubinsWord,
    q0: &AgentState,
    ss: &SafeSet,
    cfg: &PlannerConfig,
) -> bool {
    let total = word.total_length();
    let needed = ss.margin() + cfg.clearance_buffer;
    let steps = (libm::ceil(total / cfg.collision_step) as usize).max(1);
    for i in 0..=steps {
        let s = total * i as f64 / steps as f64;
        if ss.state_margin(0.0, &sample_word(word, q0, s)) < needed {
            return false;
        }
    }
    true
}

struct TreeNode {
    pose: AgentState,
    parent: usize,
    edge_len: f64,
    cost: f64,
    children: Vec<usize>,
}

/// Plans a safe leader path from `start` to `goal` with a Dubins-steered,
/// rewiring tree search; deterministic for a given seed.
///
/// A direct safe Dubins connection short-circuits the search. Otherwise
/// poses are sampled uniformly in the configured box (with goal bias),
/// connected through the nearest tree node by shortest-word length,
/// re-parented within the neighbor radius when that shortens the path, and
/// rewired likewise. The best goal-reaching chain is realized as a sampled
/// trajectory at near-cruise speed and loiter-padded to `cfg.min_duration`.
/// Fails with a planning error when no safe chain is found in budget.
pub fn plan_leader_path(
    start: &AgentState,
    goal: &AgentState,
    ss: &SafeSet,
    b: &InputBounds,
    seed: u64,
    cfg: &PlannerConfig,
) -> Result<LeaderPath> {
    cfg.validate(b)?;
    if !(ss.state_safe(0.0, start) && ss.state_safe(0.0, goal)) {
        return Err(Error::PlanningFailed);
    }

    let direct = shortest_path(start, goal, cfg.turn_radius)?;
    if word_safe(&direct, start, ss, cfg) {
        return realize_chain(&[*start, *goal], ss, b, cfg);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = alloc::vec![TreeNode {
        pose: *start,
        parent: 0,
        edge_len: 0.0,
        cost: 0.0,
        children: Vec::new(),
    }];
    let mut best_goal: Option<(f64, usize)> = None;

    for _ in 0..cfg.iterations {
        let sample = if rng.gen::<f64>() < cfg.goal_bias {
            *goal
        } else {
            AgentState::new(
                rng.gen_range(cfg.sample_min.0..cfg.sample_max.0),
                rng.gen_range(cfg.sample_min.1..cfg.sample_max.1),
                rng.gen_range(-PI..PI),
            )
        };

        // Candidate parents: the closest nodes by position prefilter, then
        // scored by word length. Deterministic ordering throughout.
        let mut by_position: Vec<(f64, usize)> = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.pose.position_distance(&sample), i))
            .collect();
        by_position.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        by_position.truncate(16);

        let mut parent: Option<(f64, usize, DubinsWord)> = None;
        for &(_, i) in &by_position {
            let w = shortest_path(&nodes[i].pose, &sample, cfg.turn_radius)?;
            let len = w.total_length();
            if len < 1e-9 {
                parent = None;
                break; // duplicate pose; skip this sample entirely
            }
            let through = nodes[i].cost + len;
            let better = match &parent {
                Some((c, _, _)) => through < *c,
                None => true,
            };
            if better && (len <= cfg.neighbor_radius || parent.is_none()) && word_safe(&w, &nodes[i].pose, ss, cfg) {
                parent = Some((through, i, w));
            }
        }
        let Some((cost, parent_idx, _)) = parent else {
            continue;
        };

        let new_idx = nodes.len();
        nodes.push(TreeNode {
            pose: sample,
            parent: parent_idx,
            edge_len: cost - nodes[parent_idx].cost,
            cost,
            children: Vec::new(),
        });
        nodes[parent_idx].children.push(new_idx);

        // Rewire neighbors through the new node when that shortens them.
        for &(pos_d, i) in &by_position {
            if i == parent_idx || pos_d > cfg.neighbor_radius {
                continue;
            }
            let w = shortest_path(&sample, &nodes[i].pose, cfg.turn_radius)?;
            let len = w.total_length();
            if len > cfg.neighbor_radius || len < 1e-9 {
                continue;
            }
            let through = cost + len;
            if through + 1e-12 < nodes[i].cost && word_safe(&w, &sample, ss, cfg) {
                let old_parent = nodes[i].parent;
                let delta = through - nodes[i].cost;
                nodes[old_parent].children.retain(|&c| c != i);
                nodes[i].parent = new_idx;
                nodes[i].edge_len = len;
                nodes[new_idx].children.push(i);
                // Propagate the improvement through the subtree.
                let mut stack = alloc::vec![i];
                while let Some(j) = stack.pop() {
                    nodes[j].cost += delta;
                    stack.extend(nodes[j].children.iter().copied());
                }
            }
        }

        // Try to finish from the new node.
        let to_goal = shortest_path(&sample, goal, cfg.turn_radius)?;
        let goal_len = to_goal.total_length();
        let total = nodes[new_idx].cost + goal_len;
        let improves = best_goal.is_none_or(|(c, _)| total < c);
        if improves && word_safe(&to_goal, &sample, ss, cfg) {
            best_goal = Some((total, new_idx));
        }
    }

    let Some((_, mut node)) = best_goal else {
        return Err(Error::PlanningFailed);
    };
    let mut chain = alloc::vec![*goal];
    loop {
        chain.push(nodes[node].pose);
        if node == 0 {
            break;
        }
        node = nodes[node].parent;
    }
    chain.reverse();
    realize_chain(&chain, ss, b, cfg)
}

/// Realizes a pose chain as a single sampled trajectory: each consecutive
/// pair becomes a shortest word flown at the admissible speed closest to
/// cruise that divides the word into whole cells, then the loiter tail
/// pads the duration. Ends with full feasibility, admissibility, and
/// safety validation via [`LeaderPath::new`].
fn realize_chain(
    chain: &[AgentState],
    ss: &SafeSet,
    b: &InputBounds,
    cfg: &PlannerConfig,
) -> Result<LeaderPath> {
    let mut inputs: Vec<ControlInput> = Vec::new();
    let mut pose = chain[0];
    for target in &chain[1..] {
        let word = shortest_path(&pose, target, cfg.turn_radius)?;
        let total = word.total_length();
        if total < 1e-9 {
            continue;
        }
        let cells = libm::round(total / (cfg.cruise_speed * cfg.dt)).max(1.0) as usize;
        let mut fitted = None;
        // Nudge the cell count until the implied speed is admissible and
        // comfortably inside the box; the window is tiny in practice.
        for k in cell_count_candidates(cells) {
            let v = total / (k as f64 * cfg.dt);
            let v_cap = (cfg.turn_radius * b.omega_max).min(b.v_max) * (1.0 - 1e-9);
            if v < b.v_min + 1e-9 || v > v_cap {
                continue;
            }
            if let Ok(c) = fit_word_cells(&word, &pose, v, k, cfg.dt, b) {
                fitted = Some(c);
                break;
            }
        }
        let Some(cells) = fitted else {
            return Err(Error::PlanningFailed);
        };
        for u in &cells {
            pose = propagate_exact(&pose, u, cfg.dt)?;
        }
        inputs.extend(cells);
    }

    let loiter = ControlInput::new(b.v_min, b.omega_max);
    let flown = inputs.len() as f64 * cfg.dt;
    if cfg.min_duration > flown {
        let extra = libm::ceil((cfg.min_duration - flown) / cfg.dt) as usize;
        inputs.extend(core::iter::repeat_n(loiter, extra));
    }
    if inputs.is_empty() {
        inputs.push(loiter);
    }
    let trajectory = SampledTrajectory::from_inputs(0.0, cfg.dt, chain[0], inputs)?;
    LeaderPath::new(trajectory, ss, b)
}

/// Cell-count candidates around the rounded target, preferring the target
/// itself, then slower (more cells), then faster.
fn cell_count_candidates(center: usize) -> impl Iterator<Item = usize> {
    [0i64, 1, -1, 2, -2, 3, -3]
        .into_iter()
        .filter_map(move |d| {
            let k = center as i64 + d;
            (k >= 1).then_some(k as usize)
        })
}
