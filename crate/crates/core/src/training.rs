//! PSO training scenarios: the descending regime on a static deck and the
//! tracking regime over an altitude by boat-speed grid.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{ControllerParams, GainSource, PARAM_BOUNDS};
use crate::error::{Error, Result};
use crate::mission::{run_episode, EpisodeResult, EpisodeSettings, EpisodeSpec, Outcome, Regime};
use crate::pso::{optimize, IterationRecord, PsoConfig, PsoResult};
use crate::sim::{DroneState, Motion, MotionPattern, SpeedSegment, Vec2, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub platform_height: f64,
    /// Spawn height above the deck for the descending regime.
    pub descend_altitude: f64,
    pub descend_offset: [f64; 2],
    /// Ramp duration used while the descending regime is trained.
    pub descend_beta: f64,
    /// Descent slope used by the tracking regime; trained in the
    /// descending regime first when absent.
    pub alpha: Option<f64>,
    pub track_offset: [f64; 2],
    /// When set, `track_offset` is a fraction of the camera footprint
    /// radius at the spawn height instead of metres.
    pub track_offset_relative: bool,
    /// Boat speed multipliers applied in consecutive segments.
    pub track_profile: Vec<f64>,
    pub track_segment: f64,
    /// Fixed descent speed in the tracking scenario, so every altitude band
    /// is flown for a comparable time. `None` keeps the altitude law.
    pub track_descent_speed: Option<f64>,
    pub altitudes: Vec<f64>,
    pub speeds: Vec<f64>,
    /// Observation noise while the descending regime is trained.
    pub descend_noise: bool,
    /// Observation noise while tracking cells are trained.
    pub track_noise: bool,
    /// Episodes averaged per cost evaluation when noise is enabled.
    pub noisy_batch: usize,
    /// Training noise seeds are `noise_seed_base + 1 ..= noise_seed_base + noisy_batch`,
    /// kept apart from the experiment seeds.
    pub noise_seed_base: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            platform_height: 1.25,
            descend_altitude: 5.0,
            descend_offset: [1.0, 0.5],
            descend_beta: 0.5,
            alpha: None,
            track_offset: [-0.56, 0.42],
            track_offset_relative: true,
            track_profile: vec![1.0, 1.2, 0.8, 1.0],
            track_segment: 1.5,
            track_descent_speed: Some(0.3),
            altitudes: linspace(1.3, 5.0, 5),
            speeds: linspace(0.0, 2.9, 5),
            descend_noise: false,
            track_noise: true,
            noisy_batch: 4,
            noise_seed_base: 1000,
        }
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.altitudes.is_empty() || self.speeds.is_empty() {
            return Err(Error::config("training grid needs at least one altitude and one speed"));
        }
        if self.track_profile.is_empty() || !(self.track_segment > 0.0) {
            return Err(Error::config("training.track_profile must be non-empty with a positive segment"));
        }
        if let Some(v) = self.track_descent_speed {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config("training.track_descent_speed must be positive"));
            }
        }
        if self.noisy_batch == 0 {
            return Err(Error::config("training.noisy_batch must be positive"));
        }
        Ok(())
    }

    fn seeds(&self, noise: bool) -> Vec<Option<u64>> {
        if noise {
            (1..=self.noisy_batch as u64).map(|i| Some(self.noise_seed_base + i)).collect()
        } else {
            vec![None]
        }
    }
}

pub fn descend_spec(
    settings: &EpisodeSettings,
    cfg: &TrainingConfig,
    params: ControllerParams,
    noise_seed: Option<u64>,
) -> Result<EpisodeSpec> {
    let pattern = MotionPattern::stationary(Vec2::zeros(), cfg.platform_height)?;
    let start = Vec3::new(
        cfg.descend_offset[0],
        cfg.descend_offset[1],
        cfg.platform_height + cfg.descend_altitude,
    );
    Ok(EpisodeSpec {
        settings: *settings,
        initial: DroneState::at_rest(start),
        pattern,
        gains: GainSource::Constant(params),
        noise_seed,
        regime: Regime::DescendTraining,
    })
}

/// Boat along +x whose speed steps through `profile` around `speed`; the
/// vehicle starts co-moving at height `h` above the deck.
pub fn track_pattern(cfg: &TrainingConfig, speed: f64) -> Result<MotionPattern> {
    let profile = cfg
        .track_profile
        .iter()
        .enumerate()
        .map(|(i, k)| SpeedSegment {
            start: i as f64 * cfg.track_segment,
            speed: k * speed,
        })
        .collect();
    MotionPattern::new(Motion::LinearVariable { heading: 0.0, profile }, Vec2::zeros(), cfg.platform_height)
}

pub fn track_spec(
    settings: &EpisodeSettings,
    cfg: &TrainingConfig,
    h: f64,
    speed: f64,
    gains: GainSource,
    noise_seed: Option<u64>,
) -> Result<EpisodeSpec> {
    let pattern = track_pattern(cfg, speed)?;
    let scale = if cfg.track_offset_relative {
        h * settings.camera.fov_half_angle.tan()
    } else {
        1.0
    };
    let start = Vec3::new(
        scale * cfg.track_offset[0],
        scale * cfg.track_offset[1],
        cfg.platform_height + h,
    );
    let v0 = cfg.track_profile[0] * speed;
    let mut settings = *settings;
    if cfg.track_descent_speed.is_some() {
        settings.descent.constant_speed = cfg.track_descent_speed;
    }
    Ok(EpisodeSpec {
        settings,
        initial: DroneState::moving(start, Vec3::new(v0, 0.0, 0.0)),
        pattern,
        gains,
        noise_seed,
        regime: Regime::TrackTraining,
    })
}

fn mean_cost(specs: impl Iterator<Item = Result<EpisodeSpec>>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0;
    for spec in specs {
        match spec {
            Ok(s) => sum += run_episode(&s).cost.total,
            Err(_) => return f64::NAN,
        }
        n += 1;
    }
    sum / n as f64
}

pub fn descend_params(x: &[f64], cfg: &TrainingConfig) -> ControllerParams {
    ControllerParams::new(x[0], x[1], x[2], x[3], cfg.descend_beta)
}

pub fn track_params(x: &[f64], alpha: f64) -> ControllerParams {
    ControllerParams::new(x[0], x[1], x[2], alpha, x[3])
}

pub fn descend_bounds() -> Vec<(f64, f64)> {
    PARAM_BOUNDS[..4].to_vec()
}

pub fn track_bounds() -> Vec<(f64, f64)> {
    vec![PARAM_BOUNDS[0], PARAM_BOUNDS[1], PARAM_BOUNDS[2], PARAM_BOUNDS[4]]
}

#[derive(Debug, Clone)]
pub struct DescendTraining {
    pub params: ControllerParams,
    pub pso: PsoResult,
    pub best_episode: EpisodeResult,
}

pub fn train_descend(settings: &EpisodeSettings, cfg: &TrainingConfig, pso: &PsoConfig) -> Result<DescendTraining> {
    settings.validate()?;
    cfg.validate()?;
    let seeds = cfg.seeds(cfg.descend_noise);
    let cost = |x: &[f64]| {
        let p = descend_params(x, cfg);
        mean_cost(seeds.iter().map(|&s| descend_spec(settings, cfg, p, s)))
    };
    let result = optimize(cost, &descend_bounds(), pso)?;
    let params = descend_params(&result.gbest, cfg);
    let best_episode = run_episode(&descend_spec(settings, cfg, params, seeds[0])?);
    Ok(DescendTraining {
        params,
        pso: result,
        best_episode,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub h: f64,
    pub v: f64,
    #[serde(rename = "K_P")]
    pub kp: f64,
    #[serde(rename = "K_I")]
    pub ki: f64,
    #[serde(rename = "K_D")]
    pub kd: f64,
    pub beta: f64,
    pub cost: f64,
    pub outcome: Outcome,
}

impl GridRow {
    pub fn input(&self) -> Vec<f64> {
        vec![self.h, self.v]
    }

    pub fn output(&self) -> Vec<f64> {
        vec![self.kp, self.ki, self.kd, self.beta]
    }
}

#[derive(Debug, Clone)]
pub struct CellTraining {
    pub row: GridRow,
    pub history: Vec<IterationRecord>,
}

pub fn train_cell(
    settings: &EpisodeSettings,
    cfg: &TrainingConfig,
    pso: &PsoConfig,
    alpha: f64,
    h: f64,
    speed: f64,
) -> Result<CellTraining> {
    let seeds = cfg.seeds(cfg.track_noise);
    let cost = |x: &[f64]| {
        let gains = GainSource::Constant(track_params(x, alpha));
        mean_cost(seeds.iter().map(|&s| track_spec(settings, cfg, h, speed, gains.clone(), s)))
    };
    let result = optimize(cost, &track_bounds(), pso)?;
    let params = track_params(&result.gbest, alpha);
    let check = run_episode(&track_spec(settings, cfg, h, speed, GainSource::Constant(params), seeds[0])?);
    Ok(CellTraining {
        row: GridRow {
            h,
            v: speed,
            kp: params.kp,
            ki: params.ki,
            kd: params.kd,
            beta: params.beta,
            cost: result.gbest_cost,
            outcome: check.outcome,
        },
        history: result.history,
    })
}

pub fn resolve_alpha(settings: &EpisodeSettings, cfg: &TrainingConfig, pso: &PsoConfig) -> Result<f64> {
    match cfg.alpha {
        Some(a) => Ok(a),
        None => Ok(train_descend(settings, cfg, pso)?.params.alpha),
    }
}

/// One PSO per grid cell, altitude-major. Cells share the PSO seed so that
/// neighbouring cells differ only through their scenario.
pub fn train_grid(settings: &EpisodeSettings, cfg: &TrainingConfig, pso: &PsoConfig) -> Result<Vec<CellTraining>> {
    settings.validate()?;
    cfg.validate()?;
    let alpha = resolve_alpha(settings, cfg, pso)?;
    let cells: Vec<(f64, f64)> = cfg
        .altitudes
        .iter()
        .flat_map(|&h| cfg.speeds.iter().map(move |&v| (h, v)))
        .collect();
    let out: Vec<CellTraining> = cells
        .par_iter()
        .map(|&(h, v)| train_cell(settings, cfg, pso, alpha, h, v))
        .collect::<Result<_>>()?;
    for c in &out {
        if c.row.outcome != Outcome::Landed {
            log::warn!("grid cell h={} v={} did not land ({})", c.row.h, c.row.v, c.row.outcome);
        }
    }
    Ok(out)
}

pub fn write_table_csv<W: Write>(rows: &[GridRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["h", "v", "K_P", "K_I", "K_D", "beta", "cost", "outcome"])?;
    for r in rows {
        let mut rec: Vec<String> = [r.h, r.v, r.kp, r.ki, r.kd, r.beta, r.cost]
            .iter()
            .map(|v| format!("{v:.17e}"))
            .collect();
        rec.push(r.outcome.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_table_csv<R: Read>(input: R, origin: &str) -> Result<Vec<GridRow>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let row: GridRow = rec.deserialize(None).map_err(|e| Error::Parse {
            path: origin.to_string(),
            line,
            message: e.to_string(),
        })?;
        let values = [row.h, row.v, row.kp, row.ki, row.kd, row.beta];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                path: origin.to_string(),
                line,
                message: "non-finite value".into(),
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Per-cell PSO convergence, altitude-major like the table.
pub fn write_grid_history_csv<W: Write>(cells: &[CellTraining], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["h", "v", "iteration", "gbest_cost", "mean_cost"])?;
    for c in cells {
        for r in &c.history {
            w.write_record([
                format!("{:.17e}", c.row.h),
                format!("{:.17e}", c.row.v),
                r.iteration.to_string(),
                format!("{:.12e}", r.gbest_cost),
                format!("{:.12e}", r.mean_cost),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Single controller written by the descending regime.
pub fn write_params_csv<W: Write>(params: &ControllerParams, cost: f64, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["K_P", "K_I", "K_D", "alpha", "beta", "cost"])?;
    let p = params.as_array();
    w.write_record(p.iter().chain([cost].iter()).map(|v| format!("{v:.17e}")))?;
    w.flush()?;
    Ok(())
}

pub fn read_params_csv<R: Read>(input: R, origin: &str) -> Result<(ControllerParams, f64)> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let parse_err = |line: u64, message: String| Error::Parse {
        path: origin.to_string(),
        line,
        message,
    };
    let rec = match r.records().next() {
        Some(rec) => rec?,
        None => return Err(parse_err(1, "no parameter row".into())),
    };
    let line = rec.position().map_or(0, |p| p.line());
    if rec.len() != 6 {
        return Err(parse_err(line, format!("expected 6 fields, found {}", rec.len())));
    }
    let mut v = [0.0; 6];
    for (slot, field) in v.iter_mut().zip(rec.iter()) {
        *slot = field
            .parse()
            .map_err(|e| parse_err(line, format!("bad number {field:?}: {e}")))?;
    }
    let params = ControllerParams::new(v[0], v[1], v[2], v[3], v[4]);
    params.validate().map_err(|e| parse_err(line, e.to_string()))?;
    Ok((params, v[5]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn track_pattern_steps_speed() {
        let cfg = TrainingConfig::default();
        let p = track_pattern(&cfg, 2.0).unwrap();
        let seg = cfg.track_segment;
        assert_eq!(p.speed_at(0.1), 2.0);
        assert_eq!(p.speed_at(1.2 * seg), 2.4);
        assert_eq!(p.speed_at(2.4 * seg), 1.6);
        assert_eq!(p.speed_at(100.0), 2.0);
    }

    #[test]
    fn track_spawn_is_co_moving_and_sees_the_deck() {
        let settings = EpisodeSettings::default();
        let cfg = TrainingConfig::default();
        for &h in &cfg.altitudes {
            for &v in &cfg.speeds {
                let spec = track_spec(&settings, &cfg, h, v, GainSource::Constant(ControllerParams::default()), None)
                    .unwrap();
                spec.validate().unwrap();
                let boat = crate::sim::step_boat(&spec.pattern, 0.0);
                let obs = crate::perception::observe(&spec.initial, &boat, &settings.camera, &settings.marker);
                assert!(obs.marker_visible(), "h={h} v={v}");
                assert_eq!(spec.initial.velocity.x, v);
            }
        }
    }

    #[test]
    fn table_round_trip_and_line_numbers() {
        let rows = vec![
            GridRow { h: 1.3, v: 0.0, kp: 1.0, ki: 0.1, kd: 0.2, beta: 0.3, cost: 12.0, outcome: Outcome::Landed },
            GridRow { h: 5.0, v: 2.9, kp: 0.7, ki: 0.0, kd: 0.9, beta: 2.1, cost: 130.0, outcome: Outcome::Timeout },
        ];
        let mut buf = Vec::new();
        write_table_csv(&rows, &mut buf).unwrap();
        assert_eq!(read_table_csv(buf.as_slice(), "t").unwrap(), rows);

        let bad = "h,v,K_P,K_I,K_D,beta,cost,outcome\n1,2,3,4,5,6,7,landed\n1,2,x,4,5,6,7,landed\n";
        match read_table_csv(bad.as_bytes(), "bad.csv") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
