//! Explore/Align/Land stage machine, the closed-loop episode runner and the
//! landing cost.

use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::controller::{
    descent_speed, ControllerParams, DescentConfig, GainSource, PidState, RampConfig, RampState,
};
use crate::error::{Error, Result};
use crate::perception::{
    observe_noisy, ActiveMarker, CameraModel, EstimatorConfig, MarkerSpec, Observation, VelocityEstimator,
};
use crate::sim::{
    detect_touchdown, step_boat, step_drone, BoatState, DroneState, MotionPattern, SimConfig, SimFault,
    TouchdownReport, Vec2, Vec3,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissionStage {
    Explore,
    Align,
    Land,
    Touchdown,
    Fault,
}

impl MissionStage {
    pub fn as_str(&self) -> &'static str {
        match self {
            MissionStage::Explore => "explore",
            MissionStage::Align => "align",
            MissionStage::Land => "land",
            MissionStage::Touchdown => "touchdown",
            MissionStage::Fault => "fault",
        }
    }

    pub fn is_legal_transition(from: MissionStage, to: MissionStage) -> bool {
        use MissionStage::*;
        matches!(
            (from, to),
            (Explore, Align) | (Align, Land) | (Land, Align) | (Align, Explore) | (Land, Touchdown) | (_, Fault)
        )
    }
}

impl FromStr for MissionStage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "explore" => MissionStage::Explore,
            "align" => MissionStage::Align,
            "land" => MissionStage::Land,
            "touchdown" => MissionStage::Touchdown,
            "fault" => MissionStage::Fault,
            other => return Err(format!("unknown stage '{other}'")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MissionConfig {
    pub align_radius_base: f64,
    pub align_radius_slope: f64,
    pub hold_time: f64,
    pub lost_grace: f64,
    pub lost_timeout: f64,
    pub hover_radius: f64,
    /// Range height below which the tag is expected to vanish during Land;
    /// losses there do not send the vehicle back to Align.
    pub blind_altitude: f64,
    pub explore_altitude: f64,
    pub explore_climb: bool,
    pub explore_climb_speed: f64,
    pub feed_forward: bool,
    pub failure_penalty: f64,
}

impl Default for MissionConfig {
    fn default() -> Self {
        Self {
            align_radius_base: 0.05,
            align_radius_slope: 0.03,
            hold_time: 0.5,
            lost_grace: 0.5,
            lost_timeout: 3.0,
            hover_radius: 0.5,
            blind_altitude: 0.45,
            explore_altitude: 5.0,
            explore_climb: true,
            explore_climb_speed: 1.0,
            feed_forward: true,
            failure_penalty: 100.0,
        }
    }
}

impl MissionConfig {
    pub fn align_radius(&self, h: f64) -> f64 {
        self.align_radius_base + self.align_radius_slope * h
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("mission.align_radius_base", self.align_radius_base),
            ("mission.hold_time", self.hold_time),
            ("mission.lost_grace", self.lost_grace),
            ("mission.lost_timeout", self.lost_timeout),
            ("mission.hover_radius", self.hover_radius),
            ("mission.explore_altitude", self.explore_altitude),
            ("mission.explore_climb_speed", self.explore_climb_speed),
        ];
        for (key, v) in checks {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("{key} must be positive, got {v}")));
            }
        }
        if !(self.align_radius_slope >= 0.0 && self.blind_altitude >= 0.0 && self.failure_penalty >= 0.0) {
            return Err(Error::config("mission slopes, blind altitude and penalty must be >= 0"));
        }
        Ok(())
    }
}

/// Stage bookkeeping with tick-counted timers.
#[derive(Debug, Clone)]
pub struct StageMachine {
    stage: MissionStage,
    entry_time: f64,
    aligned_ticks: usize,
    lost_ticks: usize,
    dt: f64,
}

const TIMER_EPS: f64 = 1e-9;

impl StageMachine {
    pub fn new(initial: MissionStage, dt: f64) -> Self {
        Self {
            stage: initial,
            entry_time: 0.0,
            aligned_ticks: 0,
            lost_ticks: 0,
            dt,
        }
    }

    pub fn stage(&self) -> MissionStage {
        self.stage
    }

    pub fn entry_time(&self) -> f64 {
        self.entry_time
    }

    pub fn lost_for(&self) -> f64 {
        self.lost_ticks as f64 * self.dt
    }

    fn enter(&mut self, stage: MissionStage, t: f64) {
        debug_assert!(MissionStage::is_legal_transition(self.stage, stage));
        self.stage = stage;
        self.entry_time = t;
        self.aligned_ticks = 0;
    }

    pub fn force(&mut self, stage: MissionStage, t: f64) {
        self.enter(stage, t);
    }

    /// One tick of the trigger rules. Returns the new stage if it changed.
    pub fn update(&mut self, obs: &Observation, est_ready: bool, cfg: &MissionConfig) -> Option<MissionStage> {
        let h = obs.range_altitude;
        let error = obs.horizontal_error().map(|e| e.norm());
        if error.is_some() {
            self.lost_ticks = 0;
        } else {
            self.lost_ticks += 1;
        }
        let lost_for = self.lost_for();
        match error {
            Some(e) if e < cfg.align_radius(h) => self.aligned_ticks += 1,
            _ => self.aligned_ticks = 0,
        }
        let aligned_for = self.aligned_ticks as f64 * self.dt;

        let next = match self.stage {
            MissionStage::Explore if error.is_some() => Some(MissionStage::Align),
            MissionStage::Align if aligned_for + TIMER_EPS >= cfg.hold_time && est_ready => Some(MissionStage::Land),
            MissionStage::Align if lost_for > cfg.lost_timeout + TIMER_EPS => Some(MissionStage::Explore),
            MissionStage::Land if h > cfg.blind_altitude => {
                let drifted = error.is_some_and(|e| e > 2.0 * cfg.align_radius(h));
                let lost = lost_for > cfg.lost_grace + TIMER_EPS;
                (drifted || lost).then_some(MissionStage::Align)
            }
            _ => None,
        };
        if let Some(stage) = next {
            self.enter(stage, obs.timestamp);
        }
        next
    }
}

/// Pure single-step form of [`StageMachine::update`].
pub fn stage_transition(
    machine: &StageMachine,
    obs: &Observation,
    est_ready: bool,
    cfg: &MissionConfig,
) -> (StageMachine, MissionStage) {
    let mut next = machine.clone();
    next.update(obs, est_ready, cfg);
    let stage = next.stage();
    (next, stage)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    DescendTraining,
    TrackTraining,
    FullMission,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Landed,
    Timeout,
    Lost,
    Crashed,
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Landed => "landed",
            Outcome::Timeout => "timeout",
            Outcome::Lost => "lost",
            Outcome::Crashed => "crashed",
        }
    }
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Outcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "landed" => Outcome::Landed,
            "timeout" => Outcome::Timeout,
            "lost" => Outcome::Lost,
            "crashed" => Outcome::Crashed,
            other => return Err(format!("unknown outcome '{other}'")),
        })
    }
}

/// Everything about an episode that is not scenario-specific.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeSettings {
    pub sim: SimConfig,
    pub camera: CameraModel,
    pub marker: MarkerSpec,
    pub mission: MissionConfig,
    pub descent: DescentConfig,
    pub ramp: RampConfig,
    pub estimator: EstimatorConfig,
}

impl EpisodeSettings {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.camera.validate()?;
        self.marker.validate()?;
        self.mission.validate()?;
        self.descent.validate()
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeSpec {
    pub settings: EpisodeSettings,
    pub initial: DroneState,
    pub pattern: MotionPattern,
    pub gains: GainSource,
    /// Observation noise seed; `None` disables noise.
    pub noise_seed: Option<u64>,
    pub regime: Regime,
}

impl EpisodeSpec {
    pub fn validate(&self) -> Result<()> {
        self.settings.validate()?;
        if let GainSource::Constant(p) = &self.gains {
            p.validate()?;
        }
        let boat = step_boat(&self.pattern, 0.0);
        let h = self.initial.position.z - boat.platform_position.z;
        if h > self.settings.mission.explore_altitude + 1e-9 {
            return Err(Error::config(format!(
                "initial height {h:.3} m above the deck exceeds the observable envelope"
            )));
        }
        Ok(())
    }

    fn initial_stage(&self) -> MissionStage {
        match self.regime {
            Regime::FullMission => MissionStage::Explore,
            Regime::DescendTraining | Regime::TrackTraining => MissionStage::Align,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub drone_position: Vec3,
    pub drone_velocity: Vec3,
    pub roll: f64,
    pub pitch: f64,
    pub roll_rate: f64,
    pub pitch_rate: f64,
    pub target_position: Vec3,
    pub boat_velocity: Vec2,
    pub stage: MissionStage,
    pub marker_visible: bool,
    pub active_marker: ActiveMarker,
    /// Observed horizontal error; zero when the marker is not visible.
    pub error: Vec2,
    pub command: Vec3,
}

impl TrajectoryRow {
    pub fn true_horizontal_error(&self) -> f64 {
        (self.target_position.xy() - self.drone_position.xy()).norm()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub dt: f64,
    pub rows: Vec<TrajectoryRow>,
    /// Contact report, or the final state's equivalent for unfinished runs.
    pub terminal: TouchdownReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct CostBreakdown {
    pub d: f64,
    pub t_land: f64,
    pub nu: f64,
    pub a_z: f64,
    pub roll_rate_integral: f64,
    pub pitch_rate_integral: f64,
    pub penalty: f64,
    pub total: f64,
}

impl CostBreakdown {
    pub fn sum_terms(&self) -> f64 {
        self.d + self.t_land + self.nu + self.a_z + self.roll_rate_integral + self.pitch_rate_integral + self.penalty
    }
}

fn evaluate_cost_with(
    log: &TrajectoryLog,
    outcome: Outcome,
    failure_penalty: f64,
    hover_start: f64,
    end: f64,
) -> CostBreakdown {
    let roll_rate_integral = log.rows.iter().map(|r| r.roll_rate.abs()).sum::<f64>() * log.dt;
    let pitch_rate_integral = log.rows.iter().map(|r| r.pitch_rate.abs()).sum::<f64>() * log.dt;
    let penalty = if outcome == Outcome::Landed {
        0.0
    } else {
        let remaining = log
            .rows
            .last()
            .map_or(0.0, |r| (r.target_position - r.drone_position).norm());
        failure_penalty + remaining
    };
    let mut c = CostBreakdown {
        d: log.terminal.distance,
        t_land: (end - hover_start).max(0.0),
        nu: log.terminal.vertical_speed.abs(),
        a_z: log.terminal.vertical_accel.abs(),
        roll_rate_integral,
        pitch_rate_integral,
        penalty,
        total: 0.0,
    };
    c.total = c.sum_terms();
    c
}

/// Landing cost from a finished log. T_land starts at the first row within
/// the hover radius of the deck center, or at the first Land row if the
/// descent began earlier.
pub fn evaluate_cost(log: &TrajectoryLog, outcome: Outcome, cfg: &MissionConfig) -> CostBreakdown {
    let end = log.rows.last().map_or(0.0, |r| r.t);
    let hover_start = log
        .rows
        .iter()
        .find(|r| r.true_horizontal_error() < cfg.hover_radius || r.stage == MissionStage::Land)
        .map_or(log.rows.first().map_or(0.0, |r| r.t), |r| r.t);
    evaluate_cost_with(log, outcome, cfg.failure_penalty, hover_start, end)
}

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub log: TrajectoryLog,
    pub cost: CostBreakdown,
    pub outcome: Outcome,
    pub fault: Option<String>,
    /// Visible-to-lost transitions while above the blind altitude.
    pub marker_loss_events: usize,
    pub final_stage: MissionStage,
}

impl EpisodeResult {
    pub fn landed(&self) -> bool {
        self.outcome == Outcome::Landed
    }
}

struct Autopilot {
    pid: PidState,
    ramp: RampState,
    estimator: VelocityEstimator,
    last_horizontal: Vec2,
    last_boat_speed: f64,
}

fn terminal_report(drone: &DroneState, boat: &BoatState, gravity: f64) -> TouchdownReport {
    TouchdownReport {
        landed: false,
        distance: (drone.horizontal_position() - boat.platform_position.xy()).norm(),
        vertical_speed: drone.velocity.z,
        vertical_accel: drone.acceleration.z + gravity,
    }
}

fn row(drone: &DroneState, boat: &BoatState, stage: MissionStage, obs: Option<&Observation>, cmd: Vec3) -> TrajectoryRow {
    TrajectoryRow {
        t: drone.time,
        drone_position: drone.position,
        drone_velocity: drone.velocity,
        roll: drone.roll,
        pitch: drone.pitch,
        roll_rate: drone.roll_rate,
        pitch_rate: drone.pitch_rate,
        target_position: boat.platform_position,
        boat_velocity: boat.platform_velocity.xy(),
        stage,
        marker_visible: obs.is_some_and(|o| o.marker_visible()),
        active_marker: obs.map_or(ActiveMarker::None, |o| o.active_marker),
        error: obs.and_then(|o| o.horizontal_error()).unwrap_or_else(Vec2::zeros),
        command: cmd,
    }
}

/// Runs one closed-loop episode. Never fails: faults become outcomes.
pub fn run_episode(spec: &EpisodeSpec) -> EpisodeResult {
    let s = &spec.settings;
    let dt = s.sim.dt;
    let mut drone = spec.initial;
    drone.time = 0.0;
    let mut rng = spec.noise_seed.map(ChaCha8Rng::seed_from_u64);
    let mut machine = StageMachine::new(spec.initial_stage(), dt);
    let mut ap = Autopilot {
        pid: PidState::new(dt, 2.0 * s.sim.max_speed),
        ramp: RampState::new(s.ramp, 0.0, dt),
        estimator: VelocityEstimator::new(s.estimator),
        last_horizontal: drone.horizontal_velocity(),
        last_boat_speed: 0.0,
    };
    let mut rows = Vec::with_capacity(s.sim.ticks(s.sim.episode_timeout) + 2);
    let mut fault = None;
    let mut loss_events = 0;
    let mut was_visible = false;
    let mut align_pending = machine.stage() == MissionStage::Align;
    let max_ticks = s.sim.ticks(s.sim.episode_timeout);

    let (outcome, terminal, boat) = 'episode: {
        for _ in 0..max_ticks {
            let boat = step_boat(&spec.pattern, drone.time);

            match detect_touchdown(&drone, &boat, s.sim.touchdown_epsilon, s.sim.gravity) {
                Ok(report) if report.landed => {
                    if machine.stage() == MissionStage::Land {
                        machine.force(MissionStage::Touchdown, drone.time);
                        break 'episode (Outcome::Landed, report, boat);
                    }
                    fault = Some(format!("deck contact during {}", machine.stage().as_str()));
                    machine.force(MissionStage::Fault, drone.time);
                    break 'episode (Outcome::Crashed, report, boat);
                }
                Ok(_) => {}
                Err(f) => {
                    fault = Some(f.to_string());
                    machine.force(MissionStage::Fault, drone.time);
                    break 'episode (Outcome::Crashed, terminal_report(&drone, &boat, s.sim.gravity), boat);
                }
            }

            let noise = rng.as_mut().map_or_else(Vec3::zeros, |r| {
                Vec3::new(StandardNormal.sample(r), StandardNormal.sample(r), StandardNormal.sample(r))
            });
            let obs = observe_noisy(&drone, &boat, &s.camera, &s.marker, noise);

            if let Some(rel) = obs.horizontal_error() {
                let _ = ap.estimator.push(drone.horizontal_position() + rel, obs.timestamp);
            }
            let visible = obs.marker_visible();
            let tracking = matches!(machine.stage(), MissionStage::Align | MissionStage::Land);
            if tracking && was_visible && !visible && obs.range_altitude > s.mission.blind_altitude {
                loss_events += 1;
            }
            was_visible = visible;

            let before = machine.stage();
            if let Some(next) = machine.update(&obs, ap.estimator.is_ready(), &s.mission) {
                if before == MissionStage::Explore && next == MissionStage::Align {
                    align_pending = true;
                }
            }

            let cmd = match control(spec, &mut ap, machine.stage(), &obs, &drone, &mut align_pending) {
                Ok(c) => c,
                Err(msg) => {
                    fault = Some(msg);
                    machine.force(MissionStage::Fault, drone.time);
                    break 'episode (Outcome::Crashed, terminal_report(&drone, &boat, s.sim.gravity), boat);
                }
            };
            rows.push(row(&drone, &boat, machine.stage(), Some(&obs), cmd));

            drone = match step_drone(&drone, cmd, &s.sim) {
                Ok(next) => next,
                Err(f @ SimFault::NonFiniteCommand(_)) | Err(f @ SimFault::Crash { .. }) => {
                    fault = Some(f.to_string());
                    machine.force(MissionStage::Fault, drone.time);
                    break 'episode (Outcome::Crashed, terminal_report(&drone, &boat, s.sim.gravity), boat);
                }
            };
        }
        let boat = step_boat(&spec.pattern, drone.time);
        let lost = machine.stage() == MissionStage::Explore || machine.lost_for() > s.mission.lost_timeout;
        let outcome = if lost { Outcome::Lost } else { Outcome::Timeout };
        (outcome, terminal_report(&drone, &boat, s.sim.gravity), boat)
    };

    rows.push(row(&drone, &boat, machine.stage(), None, Vec3::zeros()));
    let log = TrajectoryLog { dt, rows, terminal };
    let cost = evaluate_cost(&log, outcome, &s.mission);
    EpisodeResult {
        log,
        cost,
        outcome,
        fault,
        marker_loss_events: loss_events,
        final_stage: machine.stage(),
    }
}

fn control(
    spec: &EpisodeSpec,
    ap: &mut Autopilot,
    stage: MissionStage,
    obs: &Observation,
    drone: &DroneState,
    align_pending: &mut bool,
) -> Result<Vec3, String> {
    let s = &spec.settings;
    let h = obs.range_altitude;
    let estimate = ap.estimator.estimate();
    if let Some(v) = estimate {
        ap.last_boat_speed = v.norm();
    }
    let gains: ControllerParams = spec
        .gains
        .gains(h, ap.last_boat_speed)
        .map_err(|e| e.to_string())?;

    match stage {
        MissionStage::Explore => {
            let vz = if s.mission.explore_climb {
                (s.mission.explore_altitude - h).clamp(-s.mission.explore_climb_speed, s.mission.explore_climb_speed)
            } else {
                0.0
            };
            ap.last_horizontal = Vec2::zeros();
            Ok(Vec3::new(0.0, 0.0, vz))
        }
        MissionStage::Align | MissionStage::Land => {
            if *align_pending {
                *align_pending = false;
                ap.pid.reset(obs.horizontal_error().unwrap_or_else(Vec2::zeros));
                ap.ramp.restart(drone.horizontal_velocity(), gains.beta);
            }
            let feed_forward = if s.mission.feed_forward {
                estimate.unwrap_or_else(|| drone.horizontal_velocity())
            } else {
                Vec2::zeros()
            };
            let horizontal = match obs.horizontal_error() {
                Some(e) => {
                    let (v_pid, fault) = crate::controller::pid_step(&mut ap.pid, e, &gains);
                    if let Some(f) = fault {
                        log::warn!("controller fault at t={:.2}: {f}", drone.time);
                    }
                    ap.ramp.step(v_pid + feed_forward)
                }
                None if s.mission.feed_forward => estimate.unwrap_or(ap.last_horizontal),
                None => ap.last_horizontal,
            };
            ap.last_horizontal = horizontal;
            let vz = if stage == MissionStage::Land {
                -descent_speed(h, gains.alpha, &s.descent)
            } else {
                0.0
            };
            Ok(Vec3::new(horizontal.x, horizontal.y, vz))
        }
        MissionStage::Touchdown | MissionStage::Fault => Ok(Vec3::zeros()),
    }
}

pub const TRAJECTORY_COLUMNS: [&str; 24] = [
    "t", "x_d", "y_d", "z_d", "vx", "vy", "vz", "roll", "pitch", "roll_rate", "pitch_rate", "x_t", "y_t", "z_t",
    "boat_vx", "boat_vy", "stage", "marker_visible", "active_marker", "err_x", "err_y", "cmd_vx", "cmd_vy", "cmd_vz",
];

pub fn fmt_float(v: f64) -> String {
    format!("{v:.12e}")
}

pub fn write_trajectory_csv<W: Write>(log: &TrajectoryLog, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_COLUMNS)?;
    for r in &log.rows {
        let mut rec: Vec<String> = [
            r.t,
            r.drone_position.x,
            r.drone_position.y,
            r.drone_position.z,
            r.drone_velocity.x,
            r.drone_velocity.y,
            r.drone_velocity.z,
            r.roll,
            r.pitch,
            r.roll_rate,
            r.pitch_rate,
            r.target_position.x,
            r.target_position.y,
            r.target_position.z,
            r.boat_velocity.x,
            r.boat_velocity.y,
        ]
        .iter()
        .map(|&v| fmt_float(v))
        .collect();
        rec.push(r.stage.as_str().to_string());
        rec.push(r.marker_visible.to_string());
        rec.push(r.active_marker.as_str().to_string());
        rec.extend([r.error.x, r.error.y, r.command.x, r.command.y, r.command.z].iter().map(|&v| fmt_float(v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_trajectory(log: &TrajectoryLog, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_trajectory_csv(log, std::io::BufWriter::new(file))
}

/// Parses a trajectory CSV back into rows.
pub fn read_trajectory_csv<R: Read>(input: R, origin: &str) -> Result<Vec<TrajectoryRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(TRAJECTORY_COLUMNS.iter().copied()) {
        return Err(Error::Parse {
            path: origin.to_string(),
            line: 1,
            message: "unexpected trajectory header".into(),
        });
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let err = |message: String| Error::Parse {
            path: origin.to_string(),
            line,
            message,
        };
        let f = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .map_err(|_| err(format!("column {} is not a number: '{}'", TRAJECTORY_COLUMNS[i], &rec[i])))
        };
        let active_marker = match &rec[18] {
            "large" => ActiveMarker::Large,
            "small" => ActiveMarker::Small,
            "none" => ActiveMarker::None,
            other => return Err(err(format!("unknown marker '{other}'"))),
        };
        rows.push(TrajectoryRow {
            t: f(0)?,
            drone_position: Vec3::new(f(1)?, f(2)?, f(3)?),
            drone_velocity: Vec3::new(f(4)?, f(5)?, f(6)?),
            roll: f(7)?,
            pitch: f(8)?,
            roll_rate: f(9)?,
            pitch_rate: f(10)?,
            target_position: Vec3::new(f(11)?, f(12)?, f(13)?),
            boat_velocity: Vec2::new(f(14)?, f(15)?),
            stage: rec[16].parse().map_err(err)?,
            marker_visible: rec[17].parse().map_err(|_| err(format!("bad bool '{}'", &rec[17])))?,
            active_marker,
            error: Vec2::new(f(19)?, f(20)?),
            command: Vec3::new(f(21)?, f(22)?, f(23)?),
        });
    }
    Ok(rows)
}
