//! Plot-ready run outputs: trajectory CSV, metrics JSON, commit log.
//!
//! All floats are printed with Rust's shortest round-trip formatting, so
//! identical runs produce byte-identical files and parsing a file back
//! recovers the exact binary values. CSV files use a header row, UTF-8,
//! and LF line endings.

use std::fmt::Write as _;
use std::path::Path;

use gatekeeper_core::mission::LeaderPath;
use gatekeeper_core::state::{AgentState, ControlInput, InputBounds};
use gatekeeper_core::trajectory::SampledTrajectory;
use gatekeeper_core::zones::SafeSet;

use crate::sim::{Method, RunMetrics};
use crate::SimError;

/// Renders the per-sample trajectory table.
///
/// Columns: `agent_id, t, x, y, theta, v, omega, min_h, deviation`, one
/// row per agent per sample, agents in index order.
pub fn trajectories_csv(m: &RunMetrics) -> String {
    let mut out = String::new();
    out.push_str("agent_id,t,x,y,theta,v,omega,min_h,deviation\n");
    for a in &m.agents {
        for k in 0..a.states.len() {
            let t = k as f64 * m.dt;
            let s = &a.states[k];
            let u = &a.inputs[k];
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                a.agent_id, t, s.x, s.y, s.theta, u.v, u.omega, a.min_h[k], a.deviation[k]
            );
        }
    }
    out
}

/// Renders the gatekeeper commit log.
///
/// Columns: `agent_id, t_k, t_s, t_b, bound, valid_count`.
pub fn commits_csv(m: &RunMetrics) -> String {
    let mut out = String::new();
    out.push_str("agent_id,t_k,t_s,t_b,bound,valid_count\n");
    for c in &m.commits {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            c.agent_id, c.t_k, c.t_s, c.t_b, c.bound, c.valid_count
        );
    }
    out
}

/// Renders the run summary as pretty JSON.
pub fn metrics_json(m: &RunMetrics) -> String {
    let per_agent: Vec<serde_json::Value> = m
        .agents
        .iter()
        .map(|a| {
            serde_json::json!({
                "agent_id": a.agent_id,
                "violation_count": a.violation_count,
                "total_deviation": a.total_deviation,
            })
        })
        .collect();
    let commits: Vec<serde_json::Value> = m
        .commits
        .iter()
        .map(|c| {
            serde_json::json!({
                "agent_id": c.agent_id,
                "t_k": c.t_k,
                "t_s": c.t_s,
                "t_b": c.t_b,
                "bound": c.bound,
                "valid_count": c.valid_count,
            })
        })
        .collect();
    let value = serde_json::json!({
        "method": m.method.label(),
        "violation_count": m.violation_count,
        "total_deviation": m.total_deviation(),
        "per_agent": per_agent,
        "step_wall_time": {
            "count": m.step_wall_times.len(),
            "mean_s": m.mean_step_time(),
            "max_s": m.max_step_time(),
        },
        "commits": commits,
    });
    let mut text = serde_json::to_string_pretty(&value).expect("metrics serialize infallibly");
    text.push('\n');
    text
}

/// Writes `trajectories.csv`, `metrics.json`, and (for gatekeeper runs)
/// `commits.csv` into `dir`, creating it as needed.
pub fn write_run_outputs(dir: &Path, m: &RunMetrics) -> Result<(), SimError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("trajectories.csv"), trajectories_csv(m))?;
    std::fs::write(dir.join("metrics.json"), metrics_json(m))?;
    if m.method == Method::Gatekeeper {
        std::fs::write(dir.join("commits.csv"), commits_csv(m))?;
    }
    Ok(())
}

/// Reconstructs a leader path from the agent-0 rows of a trajectory CSV.
///
/// Shortest round-trip float formatting makes this exact: the recovered
/// samples are bit-identical to the run that wrote the file, so the
/// rebuilt path propagates identically.
pub fn leader_path_from_csv(text: &str, ss: &SafeSet, b: &InputBounds) -> Result<LeaderPath, SimError> {
    let bad = |line: usize, what: &str| SimError::Scenario(format!("trajectory csv line {line}: {what}"));

    let mut times: Vec<f64> = Vec::new();
    let mut states: Vec<AgentState> = Vec::new();
    let mut inputs: Vec<ControlInput> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if !line.starts_with("agent_id,") {
                return Err(bad(1, "missing header row"));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(bad(i + 1, "expected 9 columns"));
        }
        if fields[0] != "0" {
            continue;
        }
        let num = |j: usize| -> Result<f64, SimError> {
            fields[j].parse::<f64>().map_err(|_| bad(i + 1, "unparseable number"))
        };
        times.push(num(1)?);
        states.push(AgentState::new(num(2)?, num(3)?, num(4)?));
        inputs.push(ControlInput::new(num(5)?, num(6)?));
    }
    if states.len() < 2 {
        return Err(SimError::Scenario("trajectory csv: fewer than 2 leader samples".into()));
    }
    let dt = times[1] - times[0];
    inputs.pop();
    let traj = SampledTrajectory::from_samples(times[0], dt, states, inputs)?;
    LeaderPath::new(traj, ss, b).map_err(SimError::Core)
}
