//! The safety filter: backup trajectory search, candidate construction and
//! validation, switch-time selection, and the committed-trajectory
//! recursion.
//!
//! Each replanning step takes the follower's nominal trajectory (which may
//! be unsafe) and produces a committed trajectory that is provably safe
//! for all future time: follow the nominal up to a switch time `t_s`, then
//! fly a connector onto the leader path and replay the leader's recorded
//! inputs from the join point onward. Because the leader path is safe
//! everywhere and replaying its inputs keeps an agent on it, safety of the
//! finite window `[t_k, t_s + T_B]` extends to all future time.
//!
//! The switch time is chosen on a uniform grid to minimize the deviation
//! cost of the candidate against the nominal over the tail of the planning
//! window; that cost is also an online upper bound on how suboptimal the
//! committed trajectory is relative to the best safe trajectory in the
//! window, which makes it a useful runtime mission-progress monitor. When
//! no candidate on the grid is valid, the previously committed trajectory
//! stands unchanged, which preserves the safety recursion.

use alloc::vec::Vec;

use crate::cost::{integrate_cost, CostConfig};
use crate::dubins::{fit_word_cells, shortest_path};
use crate::mission::{backup_controller, LeaderPath};
use crate::state::{AgentState, ControlInput, InputBounds};
use crate::trajectory::{SampledTrajectory, GRID_TOLERANCE};
use crate::zones::SafeSet;
use crate::{Error, Result};

/// Pose distance under which a state counts as already on the leader path,
/// allowing a zero-length connector.
const DIRECT_JOIN_TOLERANCE: f64 = 1e-7;

/// Parameters of the safety filter.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GatekeeperConfig {
    /// Planning horizon of the nominal trajectory, TU.
    pub t_h: f64,
    /// Interval between replanning steps, TU; at most `t_h`.
    pub replan_period: f64,
    /// Switch-time grid points over `[t_k, t_k + t_h]`; at least 2.
    pub switch_grid_count: usize,
    /// Join points sampled along the leader path per backup search.
    pub backup_join_candidates: usize,
    /// Upper bound on the connector duration, TU.
    pub t_b_max: f64,
    /// Deviation cost used for switch-time selection and the bound.
    pub cost: CostConfig,
    /// Required clearance to every zone, LU; must match the safe set the
    /// filter is driven with.
    pub margin: f64,
}

impl GatekeeperConfig {
    /// Checks the configuration invariants.
    pub fn validate(&self) -> Result<()> {
        let ok = self.t_h.is_finite()
            && self.t_h > 0.0
            && self.replan_period > 0.0
            && self.replan_period <= self.t_h + 1e-12
            && self.switch_grid_count >= 2
            && self.backup_join_candidates >= 1
            && self.t_b_max > 0.0
            && self.margin.is_finite()
            && self.margin >= 0.0;
        if !ok {
            return Err(Error::InvalidConfig);
        }
        self.cost.validate()
    }
}

impl Default for GatekeeperConfig {
    fn default() -> Self {
        Self {
            t_h: 0.5,
            replan_period: 0.2,
            switch_grid_count: 21,
            backup_join_candidates: 20,
            t_b_max: 3.0,
            cost: CostConfig::formation_default(),
            margin: 0.02,
        }
    }
}

/// A trajectory that leaves `(t_s, x_s)`, reaches the leader path after
/// the connector duration `t_b`, and thereafter replays the leader's
/// recorded inputs.
///
/// The stored samples cover the connector plus one planning horizon of
/// replay; the replay rule extends it beyond the stored samples. The state
/// at `t_s + t_b` lies on the leader path within 1e-6 LU, and every input
/// from that time on equals the replay controller's output.
#[derive(Clone, Debug, PartialEq)]
pub struct BackupTrajectory {
    trajectory: SampledTrajectory,
    t_b: f64,
    join_param: f64,
}

impl BackupTrajectory {
    /// The sampled connector-plus-replay trajectory, starting at `t_s`.
    pub fn trajectory(&self) -> &SampledTrajectory {
        &self.trajectory
    }

    /// Duration of the connector leg, TU; zero for a direct join.
    pub fn t_b(&self) -> f64 {
        self.t_b
    }

    /// Leader-path parameter of the join point.
    pub fn join_param(&self) -> f64 {
        self.join_param
    }
}

/// One entry of the switch-time diagnostic grid: the switch time and the
/// deviation cost of its candidate, `None` where invalid or unevaluated.
pub type SwitchGridEntry = (f64, Option<f64>);

/// A candidate committed trajectory: the nominal up to `switch_time`, the
/// backup from there on.
///
/// The sample prefix on `[t_k, t_s)` equals the nominal bit for bit. When
/// `valid` the whole window `[t_k, t_s + t_b]` clears the safety margin,
/// and `bound` (equal to `j2_cost`) upper-bounds the candidate's
/// suboptimality over the planning window.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    /// Time at which the candidate leaves the nominal, TU.
    pub switch_time: f64,
    /// Samples from `t_k` through the connector end or the planning-window
    /// end, whichever is later.
    pub trajectory: SampledTrajectory,
    /// The backup leg, absent when no safe connector was found.
    pub backup: Option<BackupTrajectory>,
    /// Whether the candidate may be committed.
    pub valid: bool,
    /// Online suboptimality bound; equals `j2_cost`.
    pub bound: f64,
    /// Deviation cost of the candidate against the nominal over
    /// `[switch_time, t_k + t_h]`.
    pub j2_cost: f64,
    /// Per-switch-time deviation costs recorded during selection, for
    /// runtime monitoring: `(t_s, cost)` with `None` where the grid
    /// candidate was invalid or where selection stopped early because a
    /// provably optimal candidate had already been found. Empty on
    /// candidates built directly rather than selected.
    pub j2_grid: Vec<SwitchGridEntry>,
}

/// Identifying metadata of a commit, carried for logging.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CommitInfo {
    /// Agent the commit belongs to.
    pub agent_id: usize,
    /// Switch time of the committed candidate.
    pub switch_time: f64,
    /// Connector duration of the committed candidate.
    pub t_b: f64,
    /// Suboptimality bound at commit time.
    pub bound: f64,
    /// Grid candidates confirmed valid during the selection that produced
    /// this commit.
    pub valid_count: usize,
}

/// A committed trajectory: explicit samples through the connector (plus
/// one horizon of replay), extended to all future time by the replay rule.
#[derive(Clone, Debug, PartialEq)]
pub struct CommittedTrajectory {
    trajectory: SampledTrajectory,
    commit_time: f64,
    join_time: f64,
    join_param: f64,
    provenance: CommitInfo,
}

impl CommittedTrajectory {
    /// The explicitly sampled portion.
    pub fn trajectory(&self) -> &SampledTrajectory {
        &self.trajectory
    }

    /// Time of the step that produced this commitment.
    pub fn commit_time(&self) -> f64 {
        self.commit_time
    }

    /// Time at which the committed trajectory reaches the leader path.
    pub fn join_time(&self) -> f64 {
        self.join_time
    }

    /// Leader-path parameter reached at `join_time`.
    pub fn join_param(&self) -> f64 {
        self.join_param
    }

    /// Commit metadata for logging.
    pub fn provenance(&self) -> &CommitInfo {
        &self.provenance
    }

    /// Input to execute at time `t`: the stored samples where they exist,
    /// the leader-replay rule forever after. `t` must lie on the sample
    /// grid while within the stored span.
    pub fn input_at(&self, t: f64, lp: &LeaderPath) -> Result<ControlInput> {
        let dt = self.trajectory.dt();
        if t < self.trajectory.end_time() - 0.5 * dt {
            self.trajectory.input_at_time(t)
        } else {
            backup_controller(lp, t.max(self.join_time), self.join_time, self.join_param)
        }
    }

    fn from_candidate(agent_id: usize, t_k: f64, c: Candidate, valid_count: usize) -> Self {
        let backup = c.backup.expect("committed candidates carry a backup");
        let join_time = c.switch_time + backup.t_b();
        Self {
            trajectory: c.trajectory,
            commit_time: t_k,
            join_time,
            join_param: backup.join_param(),
            provenance: CommitInfo {
                agent_id,
                switch_time: c.switch_time,
                t_b: backup.t_b(),
                bound: c.bound,
                valid_count,
            },
        }
    }
}

/// Turn radius used for backup connectors: flying near `v_min`, turning at
/// 90% of the rate limit, so fitted cells keep input headroom.
fn connector_radius(b: &InputBounds) -> f64 {
    b.v_min / (0.9 * b.omega_max)
}

/// Builds the replay input sequence starting at leader-path parameter
/// `tau`, `n` cells of spacing `dt`.
fn replay_inputs(lp: &LeaderPath, tau: f64, n: usize, dt: f64) -> Vec<ControlInput> {
    (0..n).map(|m| lp.input_at(tau + m as f64 * dt)).collect()
}

/// Searches for the shortest safe backup trajectory from `(t_s, x_s)`.
///
/// Join points are sampled uniformly along the leader path ahead of the
/// nearest-sample projection of `x_s`, spanning the arc length reachable
/// within the connector cap. Each one is connected by a shortest
/// constant-speed path near `v_min`; connectors that are unsafe, exceed
/// the cap, or fail to quantize onto the sample grid are rejected, and the
/// shortest survivor wins (earliest join on ties). A state already on the
/// path joins directly with a zero-length connector. Returns `None` when
/// every join is rejected.
pub fn find_backup(
    t_s: f64,
    x_s: &AgentState,
    lp: &LeaderPath,
    ss: &SafeSet,
    b: &InputBounds,
    cfg: &GatekeeperConfig,
) -> Option<BackupTrajectory> {
    let dt = lp.trajectory().dt();
    let n_replay = libm::ceil(cfg.t_h / dt - 1e-9).max(1.0) as usize;

    let tau_near = lp.nearest_param(x_s);
    if x_s.pose_distance(&lp.state_at(tau_near)) < DIRECT_JOIN_TOLERANCE {
        let inputs = replay_inputs(lp, tau_near, n_replay, dt);
        let trajectory = SampledTrajectory::from_inputs(t_s, dt, *x_s, inputs).ok()?;
        return Some(BackupTrajectory { trajectory, t_b: 0.0, join_param: tau_near });
    }

    let radius = connector_radius(b);
    let v_cap = (radius * b.omega_max).min(b.v_max) * (1.0 - 1e-9);
    let s_near = lp.arclength_at(tau_near);
    let window = b.v_min * cfg.t_b_max;
    let n_joins = cfg.backup_join_candidates;

    // Quantize every reachable join first (the closed-form length is
    // cheap), then fit and safety-check in length order so the winner is
    // usually the only connector actually constructed.
    struct Join {
        length: f64,
        tau: f64,
        word: crate::dubins::DubinsWord,
        cells: usize,
        speed: f64,
    }
    let mut joins: Vec<Join> = Vec::with_capacity(n_joins);
    for j in 1..=n_joins {
        let s_j = s_near + window * j as f64 / n_joins as f64;
        let tau = lp.param_at_arclength(s_j);
        let join_state = lp.state_at(tau);
        let Ok(word) = shortest_path(x_s, &join_state, radius) else {
            continue;
        };
        let length = word.total_length();
        let cells = libm::floor(length / (b.v_min * dt)) as usize;
        if cells == 0 {
            continue; // shorter than one sample cell; unreachable speed
        }
        let speed = length / (cells as f64 * dt);
        let t_b = cells as f64 * dt;
        if speed > v_cap || t_b > cfg.t_b_max + 1e-9 {
            continue;
        }
        joins.push(Join { length, tau, word, cells, speed });
    }
    joins.sort_by(|a, b| a.length.partial_cmp(&b.length).expect("finite lengths"));

    for join in &joins {
        let Ok(cells) = fit_word_cells(&join.word, x_s, join.speed, join.cells, dt, b) else {
            continue;
        };
        let t_b = join.cells as f64 * dt;
        let connector = match SampledTrajectory::from_inputs(t_s, dt, *x_s, cells.clone()) {
            Ok(tr) => tr,
            Err(_) => continue,
        };
        match ss.trajectory_safe(&connector, t_s, t_s + t_b) {
            Ok(check) if check.safe => {}
            _ => continue,
        }
        let mut inputs = cells;
        inputs.extend(replay_inputs(lp, join.tau, n_replay, dt));
        let trajectory = SampledTrajectory::from_inputs(t_s, dt, *x_s, inputs).ok()?;
        return Some(BackupTrajectory { trajectory, t_b, join_param: join.tau });
    }
    None
}

/// Splices the nominal prefix and the backup's inputs into one trajectory
/// re-propagated from `x_k`, so the prefix samples match the nominal bit
/// for bit and the whole trajectory has zero dynamics residual.
fn splice_trajectory(
    t_k: f64,
    x_k: &AgentState,
    nominal: &SampledTrajectory,
    prefix_cells: usize,
    backup: &BackupTrajectory,
) -> Result<SampledTrajectory> {
    let mut inputs = Vec::with_capacity(prefix_cells + backup.trajectory().inputs().len());
    inputs.extend_from_slice(&nominal.inputs()[..prefix_cells]);
    inputs.extend_from_slice(backup.trajectory().inputs());
    SampledTrajectory::from_inputs(t_k, nominal.dt(), *x_k, inputs)
}

/// Checks that `nominal` starts at `t_k`, spans exactly the planning
/// horizon, and shares the leader path's grid; returns its sample spacing.
fn check_nominal(
    t_k: f64,
    nominal: &SampledTrajectory,
    lp: &LeaderPath,
    cfg: &GatekeeperConfig,
) -> Result<f64> {
    let dt = nominal.dt();
    if libm::fabs(nominal.start_time() - t_k) > GRID_TOLERANCE {
        return Err(Error::GridMismatch);
    }
    if libm::fabs(dt - lp.trajectory().dt()) > 1e-12 {
        return Err(Error::GridMismatch);
    }
    if libm::fabs(nominal.end_time() - (t_k + cfg.t_h)) > GRID_TOLERANCE {
        return Err(Error::DomainMismatch { start: t_k, end: t_k + cfg.t_h });
    }
    Ok(dt)
}

/// Builds the candidate with switch time `t_s`: nominal prefix on
/// `[t_k, t_s)`, backup from `t_s` on.
///
/// `t_s` must lie on the nominal's sample grid inside `[t_k, t_k + t_h]`.
/// Validity is decided by checking the spliced trajectory against the safe
/// set over `[t_k, t_s + t_b]`; a candidate whose backup search comes up
/// empty is marked invalid with an infinite bound. The deviation cost (and
/// bound) integrates the candidate against the nominal over
/// `[t_s, t_k + t_h]`.
#[allow(clippy::too_many_arguments)]
pub fn make_candidate(
    t_k: f64,
    x_k: &AgentState,
    nominal: &SampledTrajectory,
    t_s: f64,
    lp: &LeaderPath,
    ss: &SafeSet,
    b: &InputBounds,
    cfg: &GatekeeperConfig,
) -> Result<Candidate> {
    cfg.validate()?;
    check_nominal(t_k, nominal, lp, cfg)?;
    if t_s < t_k - GRID_TOLERANCE || t_s > t_k + cfg.t_h + GRID_TOLERANCE {
        return Err(Error::DomainMismatch { start: t_k, end: t_s });
    }
    let s_idx = nominal.index_of_time(t_s)?;
    let t_s_exact = nominal.time(s_idx);
    let x_s = nominal.state(s_idx);

    let Some(backup) = find_backup(t_s_exact, &x_s, lp, ss, b, cfg) else {
        return Ok(Candidate {
            switch_time: t_s_exact,
            trajectory: nominal.clone(),
            backup: None,
            valid: false,
            bound: f64::INFINITY,
            j2_cost: f64::INFINITY,
            j2_grid: Vec::new(),
        });
    };

    let trajectory = splice_trajectory(t_k, x_k, nominal, s_idx, &backup)?;
    let valid = ss
        .trajectory_safe(&trajectory, t_k, t_s_exact + backup.t_b())?
        .safe;
    let j2 = integrate_cost(&cfg.cost, &trajectory, nominal, t_s_exact, nominal.end_time(), t_k)?;
    Ok(Candidate {
        switch_time: t_s_exact,
        trajectory,
        backup: Some(backup),
        valid,
        bound: j2,
        j2_cost: j2,
        j2_grid: Vec::new(),
    })
}

/// Selects the best valid candidate over the switch-time grid using the
/// built-in backup search. See [`select_candidate_with`].
pub fn select_candidate(
    t_k: f64,
    x_k: &AgentState,
    nominal: &SampledTrajectory,
    lp: &LeaderPath,
    ss: &SafeSet,
    b: &InputBounds,
    cfg: &GatekeeperConfig,
) -> Result<Option<Candidate>> {
    select_candidate_with(t_k, x_k, nominal, lp, ss, cfg, false, |t_s, x_s| {
        find_backup(t_s, x_s, lp, ss, b, cfg)
    })
}

/// Selects the best valid candidate over the switch-time grid, with a
/// pluggable backup search.
///
/// The grid spans `[t_k, t_k + t_h]` uniformly with `switch_grid_count`
/// points snapped to the nominal's samples. Among valid candidates the one
/// with the smallest deviation cost wins, ties broken toward the latest
/// switch time (the longest nominal prefix). The scan runs from the latest
/// switch time downward and stops as soon as a valid candidate with zero
/// cost appears: deviation costs are nonnegative, so that candidate is
/// exactly the tie-broken minimizer. Returns `Ok(None)` when no grid
/// candidate is valid.
///
/// `recheck_connector` forces a safety re-check of the backup leg; pass
/// `true` for backup providers that do not already reject unsafe
/// connectors the way [`find_backup`] does.
#[allow(clippy::too_many_arguments)]
pub fn select_candidate_with<F>(
    t_k: f64,
    x_k: &AgentState,
    nominal: &SampledTrajectory,
    lp: &LeaderPath,
    ss: &SafeSet,
    cfg: &GatekeeperConfig,
    recheck_connector: bool,
    backup_fn: F,
) -> Result<Option<Candidate>>
where
    F: Fn(f64, &AgentState) -> Option<BackupTrajectory>,
{
    cfg.validate()?;
    check_nominal(t_k, nominal, lp, cfg)?;

    // Per-sample clearance of the nominal, computed once: every grid
    // candidate shares the nominal's samples on its prefix bit for bit, so
    // a running minimum answers each prefix-safety query in O(1).
    let margin = ss.margin();
    let mut prefix_min = Vec::with_capacity(nominal.len());
    let mut running = f64::INFINITY;
    for i in 0..nominal.len() {
        running = running.min(ss.state_margin(nominal.time(i), &nominal.state(i)));
        prefix_min.push(running);
    }

    let g = cfg.switch_grid_count;
    let last_idx = nominal.len() - 1;
    let mut grid: Vec<SwitchGridEntry> = (0..g)
        .map(|i| {
            let frac = i as f64 / (g - 1) as f64;
            let idx = libm::round(frac * last_idx as f64) as usize;
            (nominal.time(idx), None)
        })
        .collect();

    let mut best: Option<(usize, Candidate)> = None;
    let mut valid_seen = 0usize;
    let mut prev_idx = usize::MAX;
    for i in (0..g).rev() {
        let frac = i as f64 / (g - 1) as f64;
        let s_idx = libm::round(frac * last_idx as f64) as usize;
        if s_idx == prev_idx {
            continue; // grid coarser than the sample spacing; skip duplicates
        }
        prev_idx = s_idx;
        let t_s = nominal.time(s_idx);
        let x_s = nominal.state(s_idx);

        let prefix_safe = s_idx == 0 || prefix_min[s_idx - 1] >= margin;
        if !prefix_safe {
            // The spliced trajectory would fail its safety check on the
            // prefix samples regardless of the backup; skip the search.
            continue;
        }
        let Some(backup) = backup_fn(t_s, &x_s) else {
            continue;
        };
        let trajectory = splice_trajectory(t_k, x_k, nominal, s_idx, &backup)?;
        let connector_safe = if recheck_connector {
            ss.trajectory_safe(&trajectory, t_s, t_s + backup.t_b())?.safe
        } else {
            // The built-in search only returns connectors it has already
            // checked, and splicing re-propagates them bit for bit.
            true
        };
        if !connector_safe {
            continue;
        }
        let j2 = integrate_cost(&cfg.cost, &trajectory, nominal, t_s, nominal.end_time(), t_k)?;
        grid[i].1 = Some(j2);
        valid_seen += 1;

        let improves = match &best {
            Some((_, c)) => j2 < c.j2_cost,
            None => true,
        };
        if improves {
            let candidate = Candidate {
                switch_time: t_s,
                trajectory,
                backup: Some(backup),
                valid: true,
                bound: j2,
                j2_cost: j2,
                j2_grid: Vec::new(),
            };
            best = Some((valid_seen, candidate));
            if j2 == 0.0 {
                // Costs are nonnegative and the scan is latest-first, so
                // this is the tie-broken global minimizer already.
                break;
            }
        }
    }

    Ok(best.map(|(_, mut c)| {
        c.j2_grid = grid;
        c
    }))
}

/// One replanning step of the safety filter for `agent_id`.
///
/// Runs candidate selection; when it yields a valid candidate, that
/// candidate becomes the new committed trajectory with `commit_time =
/// t_k`. Otherwise the previous committed trajectory is returned
/// unchanged, never replaced by anything invalid, which is what carries
/// the safety guarantee across steps.
#[allow(clippy::too_many_arguments)]
pub fn gatekeeper_step(
    agent_id: usize,
    t_k: f64,
    x_k: &AgentState,
    nominal: &SampledTrajectory,
    committed_prev: &CommittedTrajectory,
    lp: &LeaderPath,
    ss: &SafeSet,
    b: &InputBounds,
    cfg: &GatekeeperConfig,
) -> Result<CommittedTrajectory> {
    match select_candidate(t_k, x_k, nominal, lp, ss, b, cfg)? {
        Some(c) => {
            let valid_count = c.j2_grid.iter().filter(|(_, j)| j.is_some()).count();
            Ok(CommittedTrajectory::from_candidate(agent_id, t_k, c, valid_count))
        }
        None => Ok(committed_prev.clone()),
    }
}

/// Seeds the committed-trajectory recursion at mission start with a pure
/// backup from `(t_0, x_0)`: no nominal exists yet, so the deviation bound
/// is zero by definition. Fails when no safe backup exists from the start
/// state, which a scenario must rule out.
pub fn seed_committed(
    agent_id: usize,
    t_0: f64,
    x_0: &AgentState,
    lp: &LeaderPath,
    ss: &SafeSet,
    b: &InputBounds,
    cfg: &GatekeeperConfig,
) -> Result<CommittedTrajectory> {
    cfg.validate()?;
    let backup = find_backup(t_0, x_0, lp, ss, b, cfg).ok_or(Error::PlanningFailed)?;
    Ok(CommittedTrajectory {
        join_time: t_0 + backup.t_b(),
        join_param: backup.join_param(),
        provenance: CommitInfo {
            agent_id,
            switch_time: t_0,
            t_b: backup.t_b(),
            bound: 0.0,
            valid_count: 1,
        },
        trajectory: backup.trajectory,
        commit_time: t_0,
    })
}

/// The candidate's suboptimality bound together with the switch-time grid
/// of deviation costs recorded during its selection, for runtime
/// monitoring. Errors on invalid candidates, whose bound is meaningless.
pub fn suboptimality_report(c: &Candidate) -> Result<(f64, &[SwitchGridEntry])> {
    if !c.valid {
        return Err(Error::InvalidCandidate);
    }
    Ok((c.bound, &c.j2_grid))
}
