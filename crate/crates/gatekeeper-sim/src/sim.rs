//! The closed-loop run: leader replay, follower filtering, metrics.
//!
//! One grid drives everything. The leader flies its planned path open
//! loop. Followers either execute their committed trajectories and replan
//! through the gatekeeper at fixed ticks, or track the formation reference
//! through the per-step barrier QP. Propagation is exact and the run is
//! free of disturbances, so the whole loop is deterministic given the
//! scenario; only the recorded wall-clock timings vary between repeats.

use std::time::Instant;

use gatekeeper_core::cbf::solve_cbf_qp;
use gatekeeper_core::cost::integrate_cost;
use gatekeeper_core::gatekeeper::{gatekeeper_step, seed_committed, CommittedTrajectory};
use gatekeeper_core::mission::{offset_nominal, tracking_control, FormationOffset, LeaderPath, TrackingGains};
use gatekeeper_core::state::{wrap_angle, AgentState, ControlInput};
use gatekeeper_core::trajectory::propagate_exact;
use gatekeeper_core::zones::{zone_value, SafeSet};

use crate::scenario::Scenario;
use crate::SimError;

/// Which safety method filters the followers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Committed trajectories with backup suffixes, replanned at ticks.
    Gatekeeper,
    /// Per-step control barrier QP with slack fallback.
    CbfQp,
}

impl Method {
    /// Stable lowercase label used in file names and reports.
    pub fn label(self) -> &'static str {
        match self {
            Method::Gatekeeper => "gatekeeper",
            Method::CbfQp => "cbf_qp",
        }
    }
}

/// Per-agent sampled run history.
#[derive(Clone, Debug)]
pub struct AgentSeries {
    /// Agent index; 0 is the leader.
    pub agent_id: usize,
    /// State at every sample.
    pub states: Vec<AgentState>,
    /// Input applied over the cell starting at each sample; the final
    /// entry repeats the last applied input.
    pub inputs: Vec<ControlInput>,
    /// Smallest zone clearance at each sample; infinite with no zones.
    pub min_h: Vec<f64>,
    /// Weighted deviation from the desired formation pose at each sample.
    pub deviation: Vec<f64>,
    /// Number of samples with negative clearance.
    pub violation_count: usize,
    /// Time integral of the deviation over the run (trapezoid rule).
    pub total_deviation: f64,
}

/// One accepted gatekeeper commitment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CommitRecord {
    /// Follower that committed.
    pub agent_id: usize,
    /// Replanning time the commitment was made at.
    pub t_k: f64,
    /// Switch time from nominal to backup.
    pub t_s: f64,
    /// Backup connector duration.
    pub t_b: f64,
    /// Reported deviation bound of the committed candidate.
    pub bound: f64,
    /// Valid candidates on the switch grid when this one was chosen.
    pub valid_count: usize,
    /// Deviation cost of the committed trajectory against the tick's
    /// nominal over one full horizon; equals `bound` up to rounding, and
    /// is zero by definition for the backup-only seed commitment.
    pub window_cost: f64,
}

/// Everything a run produces.
#[derive(Clone, Debug)]
pub struct RunMetrics {
    /// Method that produced the run.
    pub method: Method,
    /// Sample period, TU.
    pub dt: f64,
    /// Per-agent histories; index 0 is the leader.
    pub agents: Vec<AgentSeries>,
    /// Gatekeeper commitments in order; empty for the baseline.
    pub commits: Vec<CommitRecord>,
    /// Wall-clock seconds of each controller step (gatekeeper replanning
    /// call or barrier QP solve). Not deterministic, unlike every other
    /// field.
    pub step_wall_times: Vec<f64>,
    /// Total samples with negative clearance across agents.
    pub violation_count: usize,
}

impl RunMetrics {
    /// Sum of per-agent deviation integrals.
    pub fn total_deviation(&self) -> f64 {
        self.agents.iter().map(|a| a.total_deviation).sum()
    }

    /// Mean controller-step wall time in seconds, zero with no steps.
    pub fn mean_step_time(&self) -> f64 {
        if self.step_wall_times.is_empty() {
            0.0
        } else {
            self.step_wall_times.iter().sum::<f64>() / self.step_wall_times.len() as f64
        }
    }

    /// Largest controller-step wall time in seconds.
    pub fn max_step_time(&self) -> f64 {
        self.step_wall_times.iter().copied().fold(0.0, f64::max)
    }
}

/// Smallest raw zone clearance at a state; infinite with no zones.
fn min_clearance(zones: &[gatekeeper_core::zones::EngagementZone], s: &AgentState) -> f64 {
    zones.iter().map(|z| zone_value(z, s)).fold(f64::INFINITY, f64::min)
}

/// Weighted deviation `sqrt((x - ref)' Q (x - ref))` with wrapped heading.
fn weighted_deviation(sc: &Scenario, x: &AgentState, reference: &AgentState) -> f64 {
    let d = [x.x - reference.x, x.y - reference.y, wrap_angle(x.theta - reference.theta)];
    sc.gk.cost.q.quadratic_form(d).max(0.0).sqrt()
}

/// Runs one scenario under one method.
///
/// Fails when the scenario is invalid, the leader field cannot be planned
/// (`LeaderPlanning`), or a follower has no initial backup commitment
/// (`InitialCommit`). Identical scenarios and methods produce identical
/// results in every field except the wall-clock timings.
pub fn run(sc: &Scenario, method: Method) -> Result<RunMetrics, SimError> {
    sc.validate()?;
    let ss: SafeSet = sc.safe_set()?;
    let lp = plan_leader(sc, &ss)?;
    log::info!(
        "leader path planned: {} samples, {:.2} LU of arc",
        lp.trajectory().len(),
        lp.total_arclength()
    );

    let gains = TrackingGains::default();
    let n_steps = sc.step_count();
    let replan_every = sc.replan_every();
    let zero_offset = FormationOffset::new(0.0, 0.0).expect("zero offset is finite");
    let offsets: Vec<FormationOffset> =
        std::iter::once(zero_offset).chain(sc.offsets.iter().copied()).collect();
    let n_agents = offsets.len();

    let mut x: Vec<AgentState> = offsets.iter().map(|off| lp.desired_pose(off, 0.0).0).collect();
    let mut commits: Vec<CommitRecord> = Vec::new();
    let mut wall_times: Vec<f64> = Vec::new();

    // Followers under the gatekeeper start on a backup-only commitment:
    // it joins the leader path and replays it, so it is safe for all
    // future time before the first nominal is ever considered.
    let mut committed: Vec<Option<CommittedTrajectory>> = vec![None; n_agents];
    if method == Method::Gatekeeper {
        for a in 1..n_agents {
            let c = seed_committed(a, 0.0, &x[a], &lp, &ss, &sc.bounds, &sc.gk)
                .map_err(|err| SimError::InitialCommit { agent: a, err })?;
            commits.push(CommitRecord {
                agent_id: a,
                t_k: 0.0,
                t_s: 0.0,
                t_b: c.provenance().t_b,
                bound: 0.0,
                valid_count: c.provenance().valid_count,
                window_cost: 0.0,
            });
            committed[a] = Some(c);
        }
    }

    let mut series: Vec<AgentSeries> = (0..n_agents)
        .map(|a| AgentSeries {
            agent_id: a,
            states: Vec::with_capacity(n_steps + 1),
            inputs: Vec::with_capacity(n_steps + 1),
            min_h: Vec::with_capacity(n_steps + 1),
            deviation: Vec::with_capacity(n_steps + 1),
            violation_count: 0,
            total_deviation: 0.0,
        })
        .collect();

    let mut last_input = vec![ControlInput::new(sc.bounds.v_min, 0.0); n_agents];
    for k in 0..=n_steps {
        let t = k as f64 * sc.dt;

        // Replanning tick: refresh follower commitments from the current
        // states before choosing the inputs of this cell.
        if method == Method::Gatekeeper && k < n_steps && k % replan_every == 0 {
            for a in 1..n_agents {
                let nominal =
                    offset_nominal(&lp, &offsets[a], &x[a], t, sc.gk.t_h, sc.dt, &sc.bounds, &gains)?;
                let prev = committed[a].as_ref().expect("seeded above").clone();
                let started = Instant::now();
                let next = gatekeeper_step(a, t, &x[a], &nominal, &prev, &lp, &ss, &sc.bounds, &sc.gk)?;
                wall_times.push(started.elapsed().as_secs_f64());
                if next.commit_time() == t {
                    let info = next.provenance();
                    let window_cost =
                        integrate_cost(&sc.gk.cost, next.trajectory(), &nominal, t, t + sc.gk.t_h, t)?;
                    log::debug!(
                        "agent {a} committed at t = {t:.3}: t_s = {:.3}, bound = {:.3e}",
                        info.switch_time,
                        info.bound
                    );
                    commits.push(CommitRecord {
                        agent_id: a,
                        t_k: t,
                        t_s: info.switch_time,
                        t_b: info.t_b,
                        bound: info.bound,
                        valid_count: info.valid_count,
                        window_cost,
                    });
                }
                committed[a] = Some(next);
            }
        }

        // Choose the input applied over [t, t + dt).
        let step_inputs: Vec<ControlInput> = if k < n_steps {
            (0..n_agents)
                .map(|a| {
                    if a == 0 {
                        Ok(lp.input_at(t))
                    } else {
                        match method {
                            Method::Gatekeeper => committed[a]
                                .as_ref()
                                .expect("seeded above")
                                .input_at(t, &lp)
                                .map_err(SimError::Core),
                            Method::CbfQp => {
                                let (ref_state, ref_input) = lp.desired_pose(&offsets[a], t);
                                let u_nom =
                                    tracking_control(&x[a], &ref_state, &ref_input, &sc.bounds, &gains);
                                let started = Instant::now();
                                let (u, _slack, _feasible) =
                                    solve_cbf_qp(&x[a], &u_nom, &sc.zones, &sc.bounds, &sc.cbf);
                                wall_times.push(started.elapsed().as_secs_f64());
                                Ok(u)
                            }
                        }
                    }
                })
                .collect::<Result<_, _>>()?
        } else {
            last_input.clone()
        };

        // Record the sample, then advance.
        for a in 0..n_agents {
            let desired = lp.desired_pose(&offsets[a], t).0;
            let h = min_clearance(&sc.zones, &x[a]);
            let dev = weighted_deviation(sc, &x[a], &desired);
            let s = &mut series[a];
            s.states.push(x[a]);
            s.inputs.push(step_inputs[a]);
            s.min_h.push(h);
            s.deviation.push(dev);
            if h < 0.0 {
                s.violation_count += 1;
            }
        }
        if k < n_steps {
            for a in 0..n_agents {
                x[a] = propagate_exact(&x[a], &step_inputs[a], sc.dt)?;
            }
            last_input = step_inputs;
        }
    }

    for s in &mut series {
        s.total_deviation = trapezoid(&s.deviation, sc.dt);
    }
    let violation_count = series.iter().map(|s| s.violation_count).sum();
    log::info!(
        "{} run finished: {} violations, total deviation {:.4}",
        method.label(),
        violation_count,
        series.iter().map(|s| s.total_deviation).sum::<f64>()
    );

    Ok(RunMetrics { method, dt: sc.dt, agents: series, commits, step_wall_times: wall_times, violation_count })
}

/// Plans the leader path for a scenario.
pub fn plan_leader(sc: &Scenario, ss: &SafeSet) -> Result<LeaderPath, SimError> {
    gatekeeper_core::mission::plan_leader_path(
        &sc.leader_start,
        &sc.leader_goal,
        ss,
        &sc.bounds,
        sc.seed,
        &sc.planner_config(),
    )
    .map_err(SimError::LeaderPlanning)
}

fn trapezoid(values: &[f64], dt: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mut acc = 0.0;
    for pair in values.windows(2) {
        acc += 0.5 * (pair[0] + pair[1]) * dt;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::gen_scenario;

    fn zero_zone_scenario() -> Scenario {
        let mut sc = gen_scenario(2, Some(0)).unwrap().scenario;
        sc.duration = 8.0;
        sc
    }

    #[test]
    fn empty_field_gatekeeper_follows_the_formation_exactly() {
        let m = run(&zero_zone_scenario(), Method::Gatekeeper).unwrap();
        assert_eq!(m.violation_count, 0);
        for a in &m.agents {
            assert!(
                a.total_deviation < 1e-3,
                "agent {} drifted: {}",
                a.agent_id,
                a.total_deviation
            );
        }
        // With nothing to avoid, every tick commits the full nominal.
        assert!(m.commits.iter().filter(|c| c.t_k > 0.0).all(|c| c.bound == 0.0));
    }

    #[test]
    fn empty_field_baseline_is_also_clean() {
        let m = run(&zero_zone_scenario(), Method::CbfQp).unwrap();
        assert_eq!(m.violation_count, 0);
        for a in &m.agents {
            assert!(a.total_deviation < 1e-3);
        }
    }

    #[test]
    fn runs_are_deterministic_outside_wall_times() {
        let mut sc = gen_scenario(4, Some(14)).unwrap().scenario;
        sc.duration = 6.0;
        for method in [Method::Gatekeeper, Method::CbfQp] {
            let a = run(&sc, method).unwrap();
            let b = run(&sc, method).unwrap();
            assert_eq!(a.violation_count, b.violation_count);
            assert_eq!(a.commits, b.commits);
            for (sa, sb) in a.agents.iter().zip(&b.agents) {
                assert_eq!(sa.states, sb.states);
                assert_eq!(sa.inputs, sb.inputs);
                assert_eq!(sa.min_h, sb.min_h);
                assert_eq!(sa.deviation, sb.deviation);
                assert_eq!(sa.total_deviation, sb.total_deviation);
            }
        }
    }

    #[test]
    fn every_executed_input_is_admissible() {
        let mut sc = gen_scenario(6, Some(14)).unwrap().scenario;
        sc.duration = 6.0;
        for method in [Method::Gatekeeper, Method::CbfQp] {
            let m = run(&sc, method).unwrap();
            for a in &m.agents {
                for u in &a.inputs {
                    assert!(sc.bounds.contains(u), "{method:?} emitted {u:?}");
                }
            }
        }
    }

    #[test]
    fn gatekeeper_runs_clean_through_a_dense_field() {
        let sc = gen_scenario(8, Some(18)).unwrap().scenario;
        let m = run(&sc, Method::Gatekeeper).unwrap();
        assert_eq!(m.violation_count, 0);
        assert!(!m.commits.is_empty());
    }
}
