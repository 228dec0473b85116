//! Comparison experiments: adaptive versus fixed gains, ramp duration,
//! single versus dual marker, and the maximum trackable boat speed.

use std::io::{Read, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{ControllerParams, GainSource, PARAM_BOUNDS};
use crate::error::{Error, Result};
use crate::mission::{run_episode, CostBreakdown, EpisodeSettings, EpisodeSpec, Outcome, Regime};
use crate::mlp::GainSchedule;
use crate::perception::MarkerMode;
use crate::pso::{optimize, PsoConfig};
use crate::sim::{DroneState, Motion, MotionPattern, Vec2, Vec3};
use crate::training::{train_cell, track_spec, TrainingConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    AdaptiveVsConstant,
    RampDuration,
    MarkerMode,
    MaxSpeed,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 4] = [
        ExperimentId::AdaptiveVsConstant,
        ExperimentId::RampDuration,
        ExperimentId::MarkerMode,
        ExperimentId::MaxSpeed,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentId::AdaptiveVsConstant => "adaptive-vs-constant",
            ExperimentId::RampDuration => "ramp-duration",
            ExperimentId::MarkerMode => "marker-mode",
            ExperimentId::MaxSpeed => "max-speed",
        }
    }
}

impl std::fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentId::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown experiment '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub noise: bool,
    pub test_altitudes: Vec<f64>,
    pub test_speeds: Vec<f64>,
    pub baseline_low_altitude: f64,
    pub baseline_high_altitude: f64,
    pub baseline_speed: f64,
    pub ramp_betas: Vec<f64>,
    pub fast_boat_speed: f64,
    pub fast_boat_altitude: f64,
    /// Off-axis angle of the deck at spawn, as a fraction of the camera
    /// half field of view.
    pub fast_boat_edge_fraction: f64,
    pub marker_altitude: f64,
    pub linear_speeds: Vec<f64>,
    pub circular_rates: Vec<f64>,
    pub circular_x_speed: f64,
    pub max_speed_altitude: f64,
    pub max_speed_tolerance: f64,
    pub success_threshold: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: (1..=10).collect(),
            noise: true,
            test_altitudes: vec![2.0, 3.5, 4.5],
            test_speeds: vec![0.5, 1.5, 2.5],
            baseline_low_altitude: 1.3,
            baseline_high_altitude: 5.0,
            baseline_speed: 1.45,
            ramp_betas: vec![0.0, 0.5, 1.0, 2.15, 3.0],
            fast_boat_speed: 2.5,
            fast_boat_altitude: 3.0,
            fast_boat_edge_fraction: 0.75,
            marker_altitude: 3.0,
            linear_speeds: vec![0.1, 0.2, 0.4],
            circular_rates: vec![0.1, 0.2, 0.3, 0.4],
            circular_x_speed: 0.1,
            max_speed_altitude: 3.0,
            max_speed_tolerance: 0.05,
            success_threshold: 0.5,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("experiment.seeds must not be empty"));
        }
        if !(self.max_speed_tolerance > 0.0) {
            return Err(Error::config("experiment.max_speed_tolerance must be positive"));
        }
        if !(0.0..=1.0).contains(&self.success_threshold) {
            return Err(Error::config("experiment.success_threshold must lie in [0, 1]"));
        }
        if !(self.fast_boat_edge_fraction > 0.0 && self.fast_boat_edge_fraction < 1.0) {
            return Err(Error::config("experiment.fast_boat_edge_fraction must lie in (0, 1)"));
        }
        Ok(())
    }

    fn noise_seed(&self, seed: u64) -> Option<u64> {
        self.noise.then_some(seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub condition: String,
    pub variant: String,
    /// Spawn height above the deck.
    pub h: f64,
    /// Nominal boat speed.
    pub speed: f64,
    pub beta: f64,
    pub seed: u64,
    pub outcome: Outcome,
    pub d: f64,
    pub t_land: f64,
    pub nu: f64,
    pub a_z: f64,
    pub roll_rate_integral: f64,
    pub pitch_rate_integral: f64,
    pub penalty: f64,
    pub total: f64,
    pub marker_losses: usize,
}

impl ReportRow {
    pub fn landed(&self) -> bool {
        self.outcome == Outcome::Landed
    }

    pub fn cost(&self) -> CostBreakdown {
        CostBreakdown {
            d: self.d,
            t_land: self.t_land,
            nu: self.nu,
            a_z: self.a_z,
            roll_rate_integral: self.roll_rate_integral,
            pitch_rate_integral: self.pitch_rate_integral,
            penalty: self.penalty,
            total: self.total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub condition: String,
    pub variant: String,
    pub runs: usize,
    pub success_rate: f64,
    /// Mean landing error over landed runs only.
    pub mean_d: f64,
    /// Median landing error with runs that did not land counted as infinite.
    pub median_d: f64,
    pub mean_cost: f64,
    pub median_cost: f64,
    pub median_losses: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub id: ExperimentId,
    pub seeds: Vec<u64>,
    pub rows: Vec<ReportRow>,
    /// Named scalar results such as a tuned parameter or a boundary speed.
    pub metrics: Vec<(String, f64)>,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

impl ExperimentReport {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }

    pub fn rows_for(&self, condition: &str, variant: &str) -> Vec<&ReportRow> {
        self.rows
            .iter()
            .filter(|r| r.condition == condition && r.variant == variant)
            .collect()
    }

    /// Conditions in first-seen order.
    pub fn conditions(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.condition) {
                out.push(r.condition.clone());
            }
        }
        out
    }

    pub fn variants(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.variant) {
                out.push(r.variant.clone());
            }
        }
        out
    }

    pub fn summarize(&self, condition: &str, variant: &str) -> Option<SummaryRow> {
        let rows = self.rows_for(condition, variant);
        if rows.is_empty() {
            return None;
        }
        let landed_d: Vec<f64> = rows.iter().filter(|r| r.landed()).map(|r| r.d).collect();
        let d: Vec<f64> = rows.iter().map(|r| if r.landed() { r.d } else { f64::INFINITY }).collect();
        let cost: Vec<f64> = rows.iter().map(|r| r.total).collect();
        let losses: Vec<f64> = rows.iter().map(|r| r.marker_losses as f64).collect();
        Some(SummaryRow {
            condition: condition.to_string(),
            variant: variant.to_string(),
            runs: rows.len(),
            success_rate: rows.iter().filter(|r| r.landed()).count() as f64 / rows.len() as f64,
            mean_d: mean(&landed_d),
            median_d: median(&d),
            mean_cost: mean(&cost),
            median_cost: median(&cost),
            median_losses: median(&losses),
        })
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        let variants = self.variants();
        self.conditions()
            .iter()
            .flat_map(|c| variants.iter().filter_map(move |v| self.summarize(c, v)))
            .collect()
    }

    /// Success rate of one variant over every condition.
    pub fn success_rate(&self, variant: &str) -> f64 {
        let rows: Vec<_> = self.rows.iter().filter(|r| r.variant == variant).collect();
        rows.iter().filter(|r| r.landed()).count() as f64 / rows.len().max(1) as f64
    }
}

const ROW_COLUMNS: [&str; 18] = [
    "experiment",
    "condition",
    "variant",
    "h",
    "speed",
    "beta",
    "seed",
    "outcome",
    "d",
    "t_land",
    "nu",
    "a_z",
    "roll_rate_integral",
    "pitch_rate_integral",
    "penalty",
    "total",
    "marker_losses",
    "success",
];

fn fmt(v: f64) -> String {
    format!("{v:.12e}")
}

pub fn write_report_csv<W: Write>(report: &ExperimentReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ROW_COLUMNS)?;
    for r in &report.rows {
        let mut rec = vec![
            report.id.to_string(),
            r.condition.clone(),
            r.variant.clone(),
            fmt(r.h),
            fmt(r.speed),
            fmt(r.beta),
            r.seed.to_string(),
            r.outcome.to_string(),
        ];
        rec.extend(
            [
                r.d,
                r.t_land,
                r.nu,
                r.a_z,
                r.roll_rate_integral,
                r.pitch_rate_integral,
                r.penalty,
                r.total,
            ]
            .map(fmt),
        );
        rec.push(r.marker_losses.to_string());
        rec.push(u8::from(r.landed()).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads rows written by [`write_report_csv`]. Metrics are not part of the
/// row file and come back empty.
pub fn read_report_csv<R: Read>(input: R, origin: &str) -> Result<ExperimentReport> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let mut rows = Vec::new();
    let mut id = None;
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let parse_err = |message: String| Error::Parse {
            path: origin.to_string(),
            line,
            message,
        };
        let row: ReportRow = rec.deserialize(Some(&headers)).map_err(|e| parse_err(e.to_string()))?;
        let this: ExperimentId = rec
            .get(0)
            .unwrap_or_default()
            .parse()
            .map_err(|e: Error| parse_err(e.to_string()))?;
        if id.is_some_and(|prev| prev != this) {
            return Err(parse_err("mixed experiment ids".into()));
        }
        id = Some(this);
        rows.push(row);
    }
    let id = id.ok_or_else(|| Error::Parse {
        path: origin.to_string(),
        line: 1,
        message: "report has no rows".into(),
    })?;
    let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    Ok(ExperimentReport {
        id,
        seeds,
        rows,
        metrics: Vec::new(),
    })
}

pub fn write_summary_csv<W: Write>(report: &ExperimentReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "experiment",
        "condition",
        "variant",
        "runs",
        "success_rate",
        "mean_d",
        "median_d",
        "mean_cost",
        "median_cost",
        "median_losses",
    ])?;
    for s in report.summary() {
        let mut rec = vec![report.id.to_string(), s.condition, s.variant, s.runs.to_string()];
        rec.extend([s.success_rate, s.mean_d, s.median_d, s.mean_cost, s.median_cost, s.median_losses].map(fmt));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics_csv<W: Write>(report: &ExperimentReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["experiment", "metric", "value"])?;
    let seeds = report.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(" ");
    w.write_record([report.id.as_str(), "seeds", &seeds])?;
    for (k, v) in &report.metrics {
        w.write_record([report.id.as_str(), k, &fmt(*v)])?;
    }
    w.flush()?;
    Ok(())
}

struct Job {
    condition: String,
    variant: String,
    h: f64,
    speed: f64,
    beta: f64,
    seed: u64,
    spec: EpisodeSpec,
}

/// Runs the jobs on the worker pool; rows come back in job order.
fn run_jobs(jobs: Vec<Job>) -> Vec<ReportRow> {
    jobs.into_par_iter()
        .map(|job| {
            let result = run_episode(&job.spec);
            let c = result.cost;
            ReportRow {
                condition: job.condition,
                variant: job.variant,
                h: job.h,
                speed: job.speed,
                beta: job.beta,
                seed: job.seed,
                outcome: result.outcome,
                d: c.d,
                t_land: c.t_land,
                nu: c.nu,
                a_z: c.a_z,
                roll_rate_integral: c.roll_rate_integral,
                pitch_rate_integral: c.pitch_rate_integral,
                penalty: c.penalty,
                total: c.total,
                marker_losses: result.marker_loss_events,
            }
        })
        .collect()
}

fn beta_of(gains: &GainSource) -> f64 {
    match gains {
        GainSource::Constant(p) => p.beta,
        GainSource::Scheduled { .. } => f64::NAN,
    }
}

/// Fixed-gain controllers tuned by PSO at the low and high altitude ends of
/// the training envelope.
pub fn tune_baselines(
    settings: &EpisodeSettings,
    tcfg: &TrainingConfig,
    ecfg: &ExperimentConfig,
    pso: &PsoConfig,
    alpha: f64,
) -> Result<Vec<(String, ControllerParams)>> {
    [("constant-low", ecfg.baseline_low_altitude), ("constant-high", ecfg.baseline_high_altitude)]
        .into_par_iter()
        .map(|(name, h)| {
            let cell = train_cell(settings, tcfg, pso, alpha, h, ecfg.baseline_speed)?;
            let r = cell.row;
            Ok((name.to_string(), ControllerParams::new(r.kp, r.ki, r.kd, alpha, r.beta)))
        })
        .collect()
}

pub fn adaptive_vs_constant(
    settings: &EpisodeSettings,
    tcfg: &TrainingConfig,
    ecfg: &ExperimentConfig,
    schedule: Arc<GainSchedule>,
    alpha: f64,
    baselines: &[(String, ControllerParams)],
) -> Result<ExperimentReport> {
    ecfg.validate()?;
    let mut variants = vec![("adaptive".to_string(), GainSource::Scheduled { schedule, alpha })];
    variants.extend(baselines.iter().map(|(n, p)| (n.clone(), GainSource::Constant(*p))));
    let mut jobs = Vec::new();
    for &h in &ecfg.test_altitudes {
        for &v in &ecfg.test_speeds {
            for (name, gains) in &variants {
                for &seed in &ecfg.seeds {
                    jobs.push(Job {
                        condition: format!("h={h} v={v}"),
                        variant: name.clone(),
                        h,
                        speed: v,
                        beta: beta_of(gains),
                        seed,
                        spec: track_spec(settings, tcfg, h, v, gains.clone(), ecfg.noise_seed(seed))?,
                    });
                }
            }
        }
    }
    let mut report = ExperimentReport {
        id: ExperimentId::AdaptiveVsConstant,
        seeds: ecfg.seeds.clone(),
        rows: run_jobs(jobs),
        metrics: Vec::new(),
    };
    let conditions = report.conditions();
    let mut wins = 0;
    for c in &conditions {
        let adaptive = report.summarize(c, "adaptive").map_or(f64::NAN, |s| s.median_cost);
        let beaten = baselines.iter().all(|(n, _)| {
            report.summarize(c, n).is_some_and(|s| adaptive <= s.median_cost)
        });
        if beaten {
            wins += 1;
        }
    }
    report.metrics.push(("cells".into(), conditions.len() as f64));
    report.metrics.push(("adaptive_cells_won".into(), wins as f64));
    for (name, _) in &variants {
        let rate = report.success_rate(name);
        report.metrics.push((format!("success_rate_{name}"), rate));
    }
    for (name, p) in baselines {
        for (k, v) in [("kp", p.kp), ("ki", p.ki), ("kd", p.kd), ("beta", p.beta)] {
            report.metrics.push((format!("{name}_{k}"), v));
        }
    }
    Ok(report)
}

/// Boat at `speed` along +x entering the view from behind a vehicle that
/// hovers at rest `altitude` above deck level.
pub fn fast_boat_spec(
    settings: &EpisodeSettings,
    tcfg: &TrainingConfig,
    ecfg: &ExperimentConfig,
    params: ControllerParams,
    noise_seed: Option<u64>,
) -> Result<EpisodeSpec> {
    let angle = ecfg.fast_boat_edge_fraction * settings.camera.fov_half_angle;
    let behind = ecfg.fast_boat_altitude * angle.tan();
    let pattern = MotionPattern::new(
        Motion::Linear {
            speed: ecfg.fast_boat_speed,
            heading: 0.0,
        },
        Vec2::new(-behind, 0.0),
        tcfg.platform_height,
    )?;
    Ok(EpisodeSpec {
        settings: *settings,
        initial: DroneState::at_rest(Vec3::new(0.0, 0.0, tcfg.platform_height + ecfg.fast_boat_altitude)),
        pattern,
        gains: GainSource::Constant(params),
        noise_seed,
        regime: Regime::FullMission,
    })
}

/// PSO over beta alone on the fast-boat scenario, mean cost over the
/// experiment seeds.
pub fn tune_ramp_beta(
    settings: &EpisodeSettings,
    tcfg: &TrainingConfig,
    ecfg: &ExperimentConfig,
    base: ControllerParams,
    pso: &PsoConfig,
) -> Result<f64> {
    let cost = |x: &[f64]| {
        let p = ControllerParams { beta: x[0], ..base };
        let mut sum = 0.0;
        for &seed in &ecfg.seeds {
            match fast_boat_spec(settings, tcfg, ecfg, p, ecfg.noise_seed(seed)) {
                Ok(spec) => sum += run_episode(&spec).cost.total,
                Err(_) => return f64::NAN,
            }
        }
        sum / ecfg.seeds.len() as f64
    };
    let result = optimize(cost, &[PARAM_BOUNDS[4]], pso)?;
    Ok(result.gbest[0])
}

pub fn ramp_duration(
    settings: &EpisodeSettings,
    tcfg: &TrainingConfig,
    ecfg: &ExperimentConfig,
    base: ControllerParams,
    tuned_beta: f64,
) -> Result<ExperimentReport> {
    ecfg.validate()?;
    let mut betas: Vec<(String, f64)> = ecfg.ramp_betas.iter().map(|b| (format!("beta={b}"), *b)).collect();
    betas.push(("tuned".into(), tuned_beta));
    let condition = format!("fast boat {} m/s", ecfg.fast_boat_speed);
    let mut jobs = Vec::new();
    for (name, beta) in &betas {
        let p = ControllerParams { beta: *beta, ..base };
        for &seed in &ecfg.seeds {
            jobs.push(Job {
                condition: condition.clone(),
                variant: name.clone(),
                h: ecfg.fast_boat_altitude,
                speed: ecfg.fast_boat_speed,
                beta: *beta,
                seed,
                spec: fast_boat_spec(settings, tcfg, ecfg, p, ecfg.noise_seed(seed))?,
            });
        }
    }
    Ok(ExperimentReport {
        id: ExperimentId::RampDuration,
        seeds: ecfg.seeds.clone(),
        rows: run_jobs(jobs),
        metrics: vec![("tuned_beta".into(), tuned_beta)],
    })
}

/// The motion matrix: static, straight lines and circles with a slow drift.
pub fn marker_patterns(ecfg: &ExperimentConfig) -> Vec<(String, Motion, f64)> {
    let mut out = vec![("static".to_string(), Motion::Static, 0.0)];
    for &s in &ecfg.linear_speeds {
        out.push((format!("linear {s} m/s"), Motion::Linear { speed: s, heading: 0.0 }, s));
    }
    for &w in &ecfg.circular_rates {
        out.push((
            format!("circular {w} rad/s"),
            Motion::Circular {
                x_speed: ecfg.circular_x_speed,
                angular_speed: w,
            },
            ecfg.circular_x_speed,
        ));
    }
    out
}

/// Full mission from rest above the deck centre.
fn hover_start_spec(
    settings: &EpisodeSettings,
    tcfg: &TrainingConfig,
    motion: Motion,
    altitude: f64,
    gains: GainSource,
    noise_seed: Option<u64>,
    co_moving: bool,
) -> Result<EpisodeSpec> {
    let pattern = MotionPattern::new(motion, Vec2::zeros(), tcfg.platform_height)?;
    let boat = crate::sim::step_boat(&pattern, 0.0);
    let p = boat.platform_position;
    let position = Vec3::new(p.x, p.y, tcfg.platform_height + altitude);
    let initial = if co_moving {
        let v = boat.platform_velocity;
        DroneState::moving(position, Vec3::new(v.x, v.y, 0.0))
    } else {
        DroneState::at_rest(position)
    };
    Ok(EpisodeSpec {
        settings: *settings,
        initial,
        pattern,
        gains,
        noise_seed,
        regime: Regime::FullMission,
    })
}

pub fn marker_mode(
    settings: &EpisodeSettings,
    tcfg: &TrainingConfig,
    ecfg: &ExperimentConfig,
    gains: GainSource,
) -> Result<ExperimentReport> {
    ecfg.validate()?;
    let mut jobs = Vec::new();
    for (condition, motion, speed) in marker_patterns(ecfg) {
        for mode in [MarkerMode::Single, MarkerMode::Dual] {
            let mut s = *settings;
            s.marker.mode = mode;
            for &seed in &ecfg.seeds {
                jobs.push(Job {
                    condition: condition.clone(),
                    variant: mode.to_string(),
                    h: ecfg.marker_altitude,
                    speed,
                    beta: beta_of(&gains),
                    seed,
                    spec: hover_start_spec(
                        &s,
                        tcfg,
                        motion.clone(),
                        ecfg.marker_altitude,
                        gains.clone(),
                        ecfg.noise_seed(seed),
                        false,
                    )?,
                });
            }
        }
    }
    Ok(ExperimentReport {
        id: ExperimentId::MarkerMode,
        seeds: ecfg.seeds.clone(),
        rows: run_jobs(jobs),
        metrics: Vec::new(),
    })
}

fn max_speed_jobs(
    settings: &EpisodeSettings,
    tcfg: &TrainingConfig,
    ecfg: &ExperimentConfig,
    gains: &GainSource,
    speed: f64,
) -> Result<Vec<Job>> {
    ecfg.seeds
        .iter()
        .map(|&seed| {
            Ok(Job {
                condition: format!("speed={speed:.4}"),
                variant: gains.label().to_string(),
                h: ecfg.max_speed_altitude,
                speed,
                beta: beta_of(gains),
                seed,
                spec: hover_start_spec(
                    settings,
                    tcfg,
                    Motion::Linear { speed, heading: 0.0 },
                    ecfg.max_speed_altitude,
                    gains.clone(),
                    ecfg.noise_seed(seed),
                    true,
                )?,
            })
        })
        .collect()
}

/// Bisection on boat speed over [0, sim.max_speed] for the largest speed
/// whose landing success rate reaches the threshold. Every probed speed is
/// kept in the report.
pub fn max_speed(
    settings: &EpisodeSettings,
    tcfg: &TrainingConfig,
    ecfg: &ExperimentConfig,
    gains: GainSource,
) -> Result<ExperimentReport> {
    ecfg.validate()?;
    let mut rows = Vec::new();
    let probe = |speed: f64, rows: &mut Vec<ReportRow>| -> Result<bool> {
        let batch = run_jobs(max_speed_jobs(settings, tcfg, ecfg, &gains, speed)?);
        let rate = batch.iter().filter(|r| r.landed()).count() as f64 / batch.len() as f64;
        rows.extend(batch);
        Ok(rate >= ecfg.success_threshold)
    };
    let top = settings.sim.max_speed;
    let boundary = if !probe(0.0, &mut rows)? {
        0.0
    } else if probe(top, &mut rows)? {
        top
    } else {
        let (mut lo, mut hi) = (0.0, top);
        while hi - lo > ecfg.max_speed_tolerance {
            let mid = 0.5 * (lo + hi);
            if probe(mid, &mut rows)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    rows.sort_by(|a, b| a.speed.total_cmp(&b.speed));
    Ok(ExperimentReport {
        id: ExperimentId::MaxSpeed,
        seeds: ecfg.seeds.clone(),
        rows,
        metrics: vec![
            ("boundary_speed".into(), boundary),
            ("drone_max_speed".into(), top),
            ("ratio".into(), boundary / top),
        ],
    })
}

/// Reads a metrics file back into `(seeds, metrics)`.
pub fn read_metrics_csv<R: Read>(input: R, origin: &str) -> Result<(Vec<u64>, Vec<(String, f64)>)> {
    let mut r = csv::Reader::from_reader(input);
    let mut seeds = Vec::new();
    let mut metrics = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let parse_err = |message: String| Error::Parse {
            path: origin.to_string(),
            line,
            message,
        };
        if rec.len() != 3 {
            return Err(parse_err(format!("expected 3 fields, found {}", rec.len())));
        }
        if &rec[1] == "seeds" {
            seeds = rec[2]
                .split_whitespace()
                .map(|s| s.parse().map_err(|e| parse_err(format!("bad seed {s:?}: {e}"))))
                .collect::<Result<_>>()?;
        } else {
            let v: f64 = rec[2].parse().map_err(|e| parse_err(format!("bad value {:?}: {e}", &rec[2])))?;
            metrics.push((rec[1].to_string(), v));
        }
    }
    Ok((seeds, metrics))
}

/// One pass/fail line for an experiment's acceptance threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

/// Checks a report against the thresholds its experiment is judged by.
pub fn assess(report: &ExperimentReport) -> Vec<Verdict> {
    match report.id {
        ExperimentId::AdaptiveVsConstant => assess_adaptive(report),
        ExperimentId::RampDuration => assess_ramp(report),
        ExperimentId::MarkerMode => assess_marker(report),
        ExperimentId::MaxSpeed => assess_max_speed(report),
    }
}

fn assess_adaptive(report: &ExperimentReport) -> Vec<Verdict> {
    let baselines: Vec<String> = report.variants().into_iter().filter(|v| v != "adaptive").collect();
    let conditions = report.conditions();
    let mut won = 0;
    for c in &conditions {
        let Some(a) = report.summarize(c, "adaptive") else { continue };
        if baselines
            .iter()
            .all(|b| report.summarize(c, b).is_some_and(|s| a.median_cost <= s.median_cost))
        {
            won += 1;
        }
    }
    let needed = (2 * conditions.len()).div_ceil(3);
    let adaptive_rate = report.success_rate("adaptive");
    let rates: Vec<String> = baselines
        .iter()
        .map(|b| format!("{b} {:.2}", report.success_rate(b)))
        .collect();
    vec![
        Verdict {
            name: "adaptive median cost".into(),
            passed: !conditions.is_empty() && won >= needed,
            detail: format!("lowest median cost in {won} of {} cells (need {needed})", conditions.len()),
        },
        Verdict {
            name: "adaptive success rate".into(),
            passed: !baselines.is_empty()
                && baselines.iter().all(|b| adaptive_rate >= report.success_rate(b)),
            detail: format!("adaptive {adaptive_rate:.2} vs {}", rates.join(", ")),
        },
    ]
}

fn assess_ramp(report: &ExperimentReport) -> Vec<Verdict> {
    let condition = report.conditions().into_iter().next().unwrap_or_default();
    let sweep: Vec<(String, f64)> = report
        .variants()
        .into_iter()
        .filter(|v| v != "tuned")
        .filter_map(|v| report.rows_for(&condition, &v).first().map(|r| (v.clone(), r.beta)))
        .collect();
    let zero = sweep.iter().find(|(_, b)| *b == 0.0).map(|(v, _)| v.clone());
    let longest = sweep
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(v, _)| v.clone());
    let tuned = report.summarize(&condition, "tuned");
    let pick = |v: &Option<String>| v.as_ref().and_then(|v| report.summarize(&condition, v));
    let (zero, longest) = (pick(&zero), pick(&longest));
    let losses = match (&zero, &tuned) {
        (Some(z), Some(t)) => Verdict {
            name: "ramp marker losses".into(),
            passed: z.median_losses > t.median_losses,
            detail: format!("median losses {} {} vs tuned {}", z.variant, z.median_losses, t.median_losses),
        },
        _ => missing("ramp marker losses"),
    };
    let error = match (&longest, &tuned) {
        (Some(l), Some(t)) => Verdict {
            name: "ramp long duration error".into(),
            passed: l.median_d > t.median_d,
            detail: format!("median d {} {:.4} vs tuned {:.4}", l.variant, l.median_d, t.median_d),
        },
        _ => missing("ramp long duration error"),
    };
    vec![losses, error]
}

fn assess_marker(report: &ExperimentReport) -> Vec<Verdict> {
    let conditions = report.conditions();
    let mut bad_d = Vec::new();
    let mut bad_rate = Vec::new();
    for c in &conditions {
        let (Some(s), Some(d)) = (report.summarize(c, "single"), report.summarize(c, "dual")) else {
            bad_d.push(c.clone());
            continue;
        };
        if !(d.median_d <= s.median_d) {
            bad_d.push(format!("{c} ({:.4} > {:.4})", d.median_d, s.median_d));
        }
        if s.success_rate < 0.5 && d.success_rate < s.success_rate {
            bad_rate.push(format!("{c} ({:.2} < {:.2})", d.success_rate, s.success_rate));
        }
    }
    let describe = |bad: &[String], ok: &str| {
        if bad.is_empty() {
            ok.to_string()
        } else {
            bad.join("; ")
        }
    };
    vec![
        Verdict {
            name: "dual marker error".into(),
            passed: !conditions.is_empty() && bad_d.is_empty(),
            detail: describe(&bad_d, &format!("dual median d <= single in all {} rows", conditions.len())),
        },
        Verdict {
            name: "dual marker success".into(),
            passed: !conditions.is_empty() && bad_rate.is_empty(),
            detail: describe(&bad_rate, "dual success >= single wherever single fails"),
        },
    ]
}

fn assess_max_speed(report: &ExperimentReport) -> Vec<Verdict> {
    match (report.metric("boundary_speed"), report.metric("drone_max_speed")) {
        (Some(b), Some(top)) if top > 0.0 => {
            let ratio = b / top;
            vec![Verdict {
                name: "max trackable speed".into(),
                passed: ratio >= 0.7,
                detail: format!("boundary {b:.3} m/s of {top:.3} m/s, ratio {ratio:.3} (need 0.700)"),
            }]
        }
        _ => vec![missing("max trackable speed")],
    }
}

fn missing(name: &str) -> Verdict {
    Verdict {
        name: name.into(),
        passed: false,
        detail: "report lacks the required rows or metrics".into(),
    }
}
