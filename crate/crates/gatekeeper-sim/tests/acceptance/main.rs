//! Acceptance suite for the workspace: ten end-to-end checks covering the
//! safety guarantee, the suboptimality bound identity, switch-grid argmin
//! exactness, oracle equivalence of the geometric and numeric kernels, the
//! baseline comparison, the step-time budget, and output determinism.
//!
//! The suite runs serially under its own `main` so the wall-time checks
//! see an otherwise idle process. Each criterion prints exactly one PASS
//! or FAIL line; the process exits nonzero when any criterion fails.

mod oracles;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, Stdio};
use std::time::Instant;

use gatekeeper_core::cbf::{cbf_constraint_row, solve_cbf_qp, CbfConfig};
use gatekeeper_core::dubins::shortest_path;
use gatekeeper_core::gatekeeper::{
    gatekeeper_step, make_candidate, seed_committed, select_candidate, GatekeeperConfig,
};
use gatekeeper_core::mission::{backup_controller, offset_nominal, TrackingGains};
use gatekeeper_core::state::{wrap_angle, AgentState, ControlInput, InputBounds};
use gatekeeper_core::trajectory::propagate_exact;
use gatekeeper_core::zones::{zone_value, EngagementZone};
use gatekeeper_sim::report::write_run_outputs;
use gatekeeper_sim::scenario::{gen_scenario, save_scenario};
use gatekeeper_sim::sim::{plan_leader, run, CommitRecord, Method};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SUITE_SEEDS: u64 = 50;

/// Slimmed results of one scenario simulated under both controllers.
struct Outcome {
    seed: u64,
    zones: usize,
    t_h: f64,
    gk_violations: usize,
    cbf_violations: usize,
    gk_total_dev: f64,
    cbf_total_dev: f64,
    commits: Vec<CommitRecord>,
    step_count: usize,
    step_sum: f64,
}

struct Suite {
    outcomes: Vec<Outcome>,
    build_seconds: f64,
}

/// Simulates the 50-seed corpus under both controllers; shared by the
/// safety, bound-identity, comparison, and step-time criteria.
fn build_suite() -> Result<Suite, String> {
    let t0 = Instant::now();
    let mut outcomes = Vec::with_capacity(SUITE_SEEDS as usize);
    for seed in 0..SUITE_SEEDS {
        let sc = gen_scenario(seed, None)
            .map_err(|e| format!("generation failed for seed {seed}: {e}"))?
            .scenario;
        let gk = run(&sc, Method::Gatekeeper).map_err(|e| format!("seed {seed} run: {e}"))?;
        let qp = run(&sc, Method::CbfQp).map_err(|e| format!("seed {seed} baseline: {e}"))?;
        outcomes.push(Outcome {
            seed,
            zones: sc.zones.len(),
            t_h: sc.gk.t_h,
            gk_violations: gk.violation_count,
            cbf_violations: qp.violation_count,
            gk_total_dev: gk.total_deviation(),
            cbf_total_dev: qp.total_deviation(),
            commits: gk.commits,
            step_count: gk.step_wall_times.len(),
            step_sum: gk.step_wall_times.iter().sum(),
        });
        if (seed + 1) % 10 == 0 {
            eprintln!("  corpus: {}/{SUITE_SEEDS} scenario pairs simulated", seed + 1);
        }
    }
    Ok(Suite { outcomes, build_seconds: t0.elapsed().as_secs_f64() })
}

/// Criterion 1: the filtered runs are violation-free on every corpus
/// scenario, and the corpus builds inside its five-minute budget.
fn safety_across_scenarios(suite: &Suite) -> Result<String, String> {
    let dirty: Vec<u64> = suite
        .outcomes
        .iter()
        .filter(|o| o.gk_violations > 0)
        .map(|o| o.seed)
        .collect();
    if !dirty.is_empty() {
        return Err(format!("filtered runs report violations on seeds {dirty:?}"));
    }
    if let Some(o) = suite.outcomes.iter().find(|o| !(10..=24).contains(&o.zones)) {
        return Err(format!("seed {} has {} zones, outside the 10..=24 corpus", o.seed, o.zones));
    }
    if suite.build_seconds >= 300.0 {
        return Err(format!("corpus took {:.1} s, budget is 300 s", suite.build_seconds));
    }
    Ok(format!(
        "{} scenarios, 0 filtered violations, corpus built in {:.1} s",
        suite.outcomes.len(),
        suite.build_seconds
    ))
}

/// Criterion 2: every commit's deviation cost over the whole planning
/// window equals its reported bound (the committed prefix re-propagates
/// the nominal bit for bit, so the prefix term is exactly zero), and
/// commits that keep the full nominal report a zero bound.
fn bounds_equal_window_costs(suite: &Suite) -> Result<String, String> {
    let mut commits = 0usize;
    let mut full_prefix = 0usize;
    for o in &suite.outcomes {
        for c in &o.commits {
            commits += 1;
            let gap = (c.window_cost - c.bound).abs();
            let within = gap <= 1e-9;
            if !within {
                return Err(format!(
                    "seed {}, agent {}, t_k {}: window cost {} vs bound {} (gap {gap:.3e})",
                    o.seed, c.agent_id, c.t_k, c.window_cost, c.bound
                ));
            }
            if (c.t_s - (c.t_k + o.t_h)).abs() <= 1e-9 {
                full_prefix += 1;
                if c.bound != 0.0 {
                    return Err(format!(
                        "seed {}, t_k {}: switch at horizon end but bound {} != 0",
                        o.seed, c.t_k, c.bound
                    ));
                }
            }
        }
    }
    if commits == 0 {
        return Err("no commits recorded across the corpus".into());
    }
    Ok(format!(
        "{commits} commits, |window cost - bound| <= 1e-9, {full_prefix} horizon-end commits all bound 0"
    ))
}

/// Criterion 3: at every replanning step of three fresh runs, exhaustive
/// re-evaluation of the whole switch-time grid confirms the selected
/// candidate is exactly the valid minimizer under the latest-switch tie
/// rule.
fn selection_matches_exhaustive_grid() -> Result<String, String> {
    let mut events = 0usize;
    for seed in [0u64, 7, 23] {
        let sc = gen_scenario(seed, None).map_err(|e| e.to_string())?.scenario;
        let ss = sc.safe_set().map_err(|e| e.to_string())?;
        let lp = plan_leader(&sc, &ss).map_err(|e| e.to_string())?;
        let b = &sc.bounds;
        let cfg = &sc.gk;
        let gains = TrackingGains::default();
        let off = sc.offsets[0];
        let mut x = lp.desired_pose(&off, 0.0).0;
        let mut committed =
            seed_committed(1, 0.0, &x, &lp, &ss, b, cfg).map_err(|e| e.to_string())?;
        let every = sc.replan_every();
        for k in 0..sc.step_count() {
            let t = k as f64 * sc.dt;
            if k % every == 0 {
                let nominal = offset_nominal(&lp, &off, &x, t, cfg.t_h, sc.dt, b, &gains)
                    .map_err(|e| e.to_string())?;
                let selected = select_candidate(t, &x, &nominal, &lp, &ss, b, cfg)
                    .map_err(|e| e.to_string())?;

                let last = nominal.len() - 1;
                let mut indices: Vec<usize> = (0..cfg.switch_grid_count)
                    .map(|i| {
                        let frac = i as f64 / (cfg.switch_grid_count - 1) as f64;
                        (frac * last as f64).round() as usize
                    })
                    .collect();
                indices.dedup();
                let mut best: Option<(f64, f64)> = None;
                for &idx in &indices {
                    let c = make_candidate(t, &x, &nominal, nominal.time(idx), &lp, &ss, b, cfg)
                        .map_err(|e| e.to_string())?;
                    if c.valid {
                        let wins = match best {
                            None => true,
                            Some((bj, bt)) => {
                                c.j2_cost < bj || (c.j2_cost == bj && c.switch_time > bt)
                            }
                        };
                        if wins {
                            best = Some((c.j2_cost, c.switch_time));
                        }
                    }
                }
                match (&selected, best) {
                    (Some(sel), Some((bj, bt))) => {
                        if sel.j2_cost != bj || sel.switch_time != bt {
                            return Err(format!(
                                "seed {seed}, t_k {t}: selected (cost {}, t_s {}) vs exhaustive (cost {bj}, t_s {bt})",
                                sel.j2_cost, sel.switch_time
                            ));
                        }
                        events += 1;
                    }
                    (None, None) => {}
                    (sel, ex) => {
                        return Err(format!(
                            "seed {seed}, t_k {t}: selection {} a candidate but the exhaustive sweep {}",
                            if sel.is_some() { "found" } else { "did not find" },
                            if ex.is_some() { "found one" } else { "found none" },
                        ));
                    }
                }
                committed = gatekeeper_step(1, t, &x, &nominal, &committed, &lp, &ss, b, cfg)
                    .map_err(|e| e.to_string())?;
            }
            let u = committed.input_at(t, &lp).map_err(|e| e.to_string())?;
            x = propagate_exact(&x, &u, sc.dt).map_err(|e| e.to_string())?;
        }
    }
    if events < 100 {
        return Err(format!("only {events} commit events re-evaluated, need 100"));
    }
    Ok(format!("{events} commit events, selected candidate is the exact grid argmin"))
}

/// Criterion 4: shortest-path lengths agree with an independent shooting
/// solver on 1000 random pose pairs, inside a 30-second budget.
fn dubins_matches_shooting() -> Result<String, String> {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(401);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let q0 = random_pose(&mut rng, 2.0);
        let q1 = random_pose(&mut rng, 2.0);
        let r = rng.gen_range(0.05..1.0);
        let lib = shortest_path(&q0, &q1, r)
            .map_err(|e| format!("instance {i}: {e}"))?
            .total_length();
        let oracle = oracles::dubins_shooting_length(&q0, &q1, r)
            .ok_or_else(|| format!("instance {i}: shooting found no closed pattern"))?;
        let gap = (lib - oracle).abs();
        let within = gap <= 1e-6;
        if !within {
            return Err(format!(
                "instance {i}: library {lib} vs shooting {oracle} (gap {gap:.3e}, radius {r})"
            ));
        }
        worst = worst.max(gap);
    }
    let elapsed = t0.elapsed().as_secs_f64();
    if elapsed >= 30.0 {
        return Err(format!("took {elapsed:.1} s, budget is 30 s"));
    }
    Ok(format!("1000 instances, max length gap {worst:.2e}, {elapsed:.1} s"))
}

/// Criterion 5: replaying the recorded input stream from 100 random points
/// of a planned leader path stays on the path to its end.
fn backup_replay_tracks_path() -> Result<String, String> {
    let sc = gen_scenario(3, Some(14)).map_err(|e| e.to_string())?.scenario;
    let ss = sc.safe_set().map_err(|e| e.to_string())?;
    let lp = plan_leader(&sc, &ss).map_err(|e| e.to_string())?;
    let n = (lp.end_param() / sc.dt).round() as usize + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(501);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let i0 = rng.gen_range(0..n - 1);
        let tau0 = i0 as f64 * sc.dt;
        let mut x = lp.state_at(tau0);
        for m in 0..(n - 1 - i0) {
            let t = tau0 + m as f64 * sc.dt;
            let u = backup_controller(&lp, t, tau0, tau0).map_err(|e| e.to_string())?;
            x = propagate_exact(&x, &u, sc.dt).map_err(|e| e.to_string())?;
            let on_path = lp.state_at(tau0 + (m + 1) as f64 * sc.dt);
            worst = worst.max(x.position_distance(&on_path));
        }
    }
    let within = worst <= 1e-6;
    if !within {
        return Err(format!("max replay drift {worst:.3e} exceeds 1e-6"));
    }
    Ok(format!("100 replay starts, max drift from the path {worst:.2e}"))
}

/// Criterion 6: the closed-form flow matches fixed-step RK4 at step 1e-5
/// over one time unit for 500 random admissible inputs.
fn exact_flow_matches_rk4() -> Result<String, String> {
    let b = InputBounds::default();
    let mut rng = ChaCha8Rng::seed_from_u64(601);
    let mut worst_pos = 0.0f64;
    let mut worst_heading = 0.0f64;
    for i in 0..500 {
        let x0 = random_pose(&mut rng, 2.0);
        let u = ControlInput::new(
            rng.gen_range(b.v_min..b.v_max),
            rng.gen_range(-b.omega_max..b.omega_max),
        );
        let exact = propagate_exact(&x0, &u, 1.0).map_err(|e| format!("input {i}: {e}"))?;
        let rk = oracles::rk4_flow(&x0, &u, 1.0, 1e-5);
        let dp = exact.position_distance(&rk);
        let dh = wrap_angle(exact.theta - rk.theta).abs();
        if !(dp <= 1e-6 && dh <= 1e-6) {
            return Err(format!("input {i}: position gap {dp:.3e}, heading gap {dh:.3e}"));
        }
        worst_pos = worst_pos.max(dp);
        worst_heading = worst_heading.max(dh);
    }
    Ok(format!(
        "500 admissible inputs over 1 TU, max gaps: position {worst_pos:.2e}, heading {worst_heading:.2e}"
    ))
}

/// Criterion 7: feasible per-step QP projections match a dense-grid
/// minimizer's objective, and constraint rows match finite differences of
/// the zone field.
fn qp_matches_dense_grid() -> Result<String, String> {
    let b = InputBounds::default();
    let cfg = CbfConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(701);
    let mut accepted = 0usize;
    let mut tries = 0usize;
    let mut worst = 0.0f64;
    while accepted < 200 {
        tries += 1;
        if tries > 5000 {
            return Err(format!("instance generation stalled after {tries} draws"));
        }
        let s = random_pose(&mut rng, 1.0);
        let zones = random_zone_cluster(&mut rng, &s);
        let u_nom = ControlInput::new(
            rng.gen_range(b.v_min..b.v_max),
            rng.gen_range(-b.omega_max..b.omega_max),
        );
        let (u, _, feasible) = solve_cbf_qp(&s, &u_nom, &zones, &b, &cfg);
        if !feasible {
            continue;
        }
        let rows: Vec<([f64; 2], f64)> = zones
            .iter()
            .map(|z| cbf_constraint_row(z, &s, cfg.alpha_gain))
            .collect();
        let Some(oracle) = oracles::grid_qp_objective([u_nom.v, u_nom.omega], &rows, &b) else {
            continue;
        };
        let ours = (u.v - u_nom.v).powi(2) + (u.omega - u_nom.omega).powi(2);
        let gap = (ours - oracle).abs();
        let within = gap <= 1e-6;
        if !within {
            return Err(format!(
                "draw {tries}: objective {ours} vs dense grid {oracle} (gap {gap:.3e})"
            ));
        }
        worst = worst.max(gap);
        accepted += 1;
    }

    let mut worst_grad = 0.0f64;
    for i in 0..200 {
        let s = random_pose(&mut rng, 1.0);
        let z = &random_zone_cluster(&mut rng, &s)[0];
        let (a, rhs) = cbf_constraint_row(z, &s, cfg.alpha_gain);
        let eps = 1e-6;
        let (sin_t, cos_t) = s.theta.sin_cos();
        let ahead = AgentState::new(s.x + eps * cos_t, s.y + eps * sin_t, s.theta);
        let behind = AgentState::new(s.x - eps * cos_t, s.y - eps * sin_t, s.theta);
        let fd_speed = (zone_value(z, &ahead) - zone_value(z, &behind)) / (2.0 * eps);
        let left = AgentState::new(s.x, s.y, s.theta + eps);
        let right = AgentState::new(s.x, s.y, s.theta - eps);
        let fd_turn = (zone_value(z, &left) - zone_value(z, &right)) / (2.0 * eps);
        let g0 = (fd_speed - a[0]).abs() / a[0].abs().max(1.0);
        let g1 = (fd_turn - a[1]).abs() / a[1].abs().max(1.0);
        if !(g0 <= 1e-5 && g1 <= 1e-5) {
            return Err(format!(
                "row gradient {i}: speed gap {g0:.3e}, turn gap {g1:.3e} relative"
            ));
        }
        let rhs_gap = (rhs + cfg.alpha_gain * zone_value(z, &s)).abs();
        let rhs_within = rhs_gap <= 1e-12;
        if !rhs_within {
            return Err(format!("row {i}: right-hand side off by {rhs_gap:.3e}"));
        }
        worst_grad = worst_grad.max(g0.max(g1));
    }
    Ok(format!(
        "200 projections, max objective gap {worst:.2e}; 200 rows, max gradient gap {worst_grad:.2e} relative"
    ))
}

/// Criterion 8: on a sizable share of the corpus the per-step baseline
/// either violates a zone or deviates more than three times as much as the
/// filter, while the filter stays violation-free.
fn baseline_separates_from_filter(suite: &Suite) -> Result<String, String> {
    let qualifying = suite
        .outcomes
        .iter()
        .filter(|o| {
            o.gk_violations == 0 && (o.cbf_violations > 0 || o.cbf_total_dev > 3.0 * o.gk_total_dev)
        })
        .count();
    let violating = suite.outcomes.iter().filter(|o| o.cbf_violations > 0).count();
    if qualifying < 10 {
        return Err(format!(
            "only {qualifying}/{} scenarios separate the methods ({violating} baseline violations)",
            suite.outcomes.len()
        ));
    }
    Ok(format!(
        "{qualifying}/{} scenarios separate the methods; baseline violates on {violating}",
        suite.outcomes.len()
    ))
}

/// Criterion 9: the mean filter-step wall time stays under 10 ms at the
/// default 21 x 20 search size, and the per-run report records it.
fn step_time_within_budget(suite: &Suite) -> Result<String, String> {
    let cfg = GatekeeperConfig::default();
    if cfg.switch_grid_count != 21 || cfg.backup_join_candidates != 20 {
        return Err(format!(
            "default search is {} x {}, expected 21 x 20",
            cfg.switch_grid_count, cfg.backup_join_candidates
        ));
    }
    let steps: usize = suite.outcomes.iter().map(|o| o.step_count).sum();
    let total: f64 = suite.outcomes.iter().map(|o| o.step_sum).sum();
    if steps == 0 {
        return Err("no filter steps were timed".into());
    }
    let mean = total / steps as f64;
    let within = mean < 0.01;
    if !within {
        return Err(format!("mean filter step {:.3} ms exceeds 10 ms", mean * 1e3));
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let sc = gen_scenario(0, None).map_err(|e| e.to_string())?.scenario;
    let metrics = run(&sc, Method::Gatekeeper).map_err(|e| e.to_string())?;
    write_run_outputs(dir.path(), &metrics).map_err(|e| e.to_string())?;
    let text =
        std::fs::read_to_string(dir.path().join("metrics.json")).map_err(|e| e.to_string())?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let recorded = v["step_wall_time"]["mean_s"]
        .as_f64()
        .ok_or("metrics.json lacks step_wall_time.mean_s")?;
    if !(recorded.is_finite() && recorded < 0.01) {
        return Err(format!("recorded mean step {recorded} s is not under 10 ms"));
    }
    Ok(format!(
        "mean filter step {:.3} ms over {steps} steps, recorded in metrics.json ({:.3} ms)",
        mean * 1e3,
        recorded * 1e3
    ))
}

/// Criterion 10: running the binary twice on the same scenario produces
/// byte-identical trajectory files.
fn repeated_runs_identical() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let g = gen_scenario(12, None).map_err(|e| e.to_string())?;
    let path = dir.path().join("scenario.toml");
    save_scenario(&path, &g.scenario, &g.header).map_err(|e| e.to_string())?;
    let bin = env!("CARGO_BIN_EXE_gatekeeper");
    for out in ["first", "second"] {
        let status = Command::new(bin)
            .arg("run")
            .arg(&path)
            .arg("--method")
            .arg("gatekeeper")
            .arg("--out")
            .arg(dir.path().join(out))
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .map_err(|e| e.to_string())?;
        if !status.success() {
            return Err(format!("run into {out} exited with {status}"));
        }
    }
    let a = std::fs::read(dir.path().join("first/trajectories.csv")).map_err(|e| e.to_string())?;
    let b = std::fs::read(dir.path().join("second/trajectories.csv")).map_err(|e| e.to_string())?;
    if a != b {
        return Err("trajectories.csv differs between identical runs".into());
    }
    Ok(format!("two runs, trajectories.csv byte-identical ({} bytes)", a.len()))
}

fn random_pose(rng: &mut ChaCha8Rng, extent: f64) -> AgentState {
    AgentState::new(
        rng.gen_range(-extent..extent),
        rng.gen_range(-extent..extent),
        rng.gen_range(-core::f64::consts::PI..core::f64::consts::PI),
    )
}

fn random_zone_cluster(rng: &mut ChaCha8Rng, s: &AgentState) -> Vec<EngagementZone> {
    let count = rng.gen_range(1..=3);
    (0..count)
        .map(|_| {
            let ang = rng.gen_range(-core::f64::consts::PI..core::f64::consts::PI);
            let d = rng.gen_range(0.6..3.0);
            let r_max = rng.gen_range(0.3..0.7);
            EngagementZone::new(
                (s.x + d * ang.cos(), s.y + d * ang.sin()),
                rng.gen_range(-core::f64::consts::PI..core::f64::consts::PI),
                r_max,
                r_max * rng.gen_range(0.35..0.65),
                rng.gen_range(1.0..3.0),
            )
            .expect("sampled parameters satisfy zone invariants")
        })
        .collect()
}

/// Runs one criterion, converting a panic into a failure message.
fn guarded<F>(f: F) -> Result<String, String>
where
    F: FnOnce() -> Result<String, String>,
{
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| p.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "unknown panic".into());
        Err(format!("panicked: {msg}"))
    })
}

fn main() {
    eprintln!("building the 50-scenario comparison corpus (both controllers per seed)");
    let suite = build_suite();

    let mut failed = 0usize;
    let mut verdict = |n: usize, outcome: Result<String, String>| match outcome {
        Ok(detail) => println!("criterion {n}: PASS - {detail}"),
        Err(detail) => {
            println!("criterion {n}: FAIL - {detail}");
            failed += 1;
        }
    };

    let (c1, c2, c8, c9) = match &suite {
        Ok(s) => (
            guarded(|| safety_across_scenarios(s)),
            guarded(|| bounds_equal_window_costs(s)),
            guarded(|| baseline_separates_from_filter(s)),
            guarded(|| step_time_within_budget(s)),
        ),
        Err(e) => {
            let unavailable = || Err(format!("comparison corpus unavailable: {e}"));
            (unavailable(), unavailable(), unavailable(), unavailable())
        }
    };
    verdict(1, c1);
    verdict(2, c2);
    verdict(3, guarded(selection_matches_exhaustive_grid));
    verdict(4, guarded(dubins_matches_shooting));
    verdict(5, guarded(backup_replay_tracks_path));
    verdict(6, guarded(exact_flow_matches_rk4));
    verdict(7, guarded(qp_matches_dense_grid));
    verdict(8, c8);
    verdict(9, c9);
    verdict(10, guarded(repeated_runs_identical));

    if failed > 0 {
        eprintln!("{failed} criteria failed");
        std::process::exit(1);
    }
}
