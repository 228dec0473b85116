//! Adaptive velocity controller: discrete PID on horizontal error, tanh
//! descent law, slew-limiting ramp, and gain lookup.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::mlp::GainSchedule;
use crate::sim::Vec2;

#[derive(Debug, Clone, Copy, Error, PartialEq)]
pub enum ControllerFault {
    #[error("non-finite tracking error ({0}, {1})")]
    NonFiniteError(f64, f64),
    #[error("gain schedule has not been trained")]
    Untrained,
}

/// One candidate controller, and one PSO particle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControllerParams {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Descent slope scale, 1/m.
    pub alpha: f64,
    /// Ramp duration, s.
    pub beta: f64,
}

impl ControllerParams {
    pub fn new(kp: f64, ki: f64, kd: f64, alpha: f64, beta: f64) -> Self {
        Self { kp, ki, kd, alpha, beta }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.kp, self.ki, self.kd, self.alpha, self.beta];
        if all.iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(())
        } else {
            Err(Error::config(format!("controller parameters must be finite and >= 0: {self:?}")))
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.kp, self.ki, self.kd, self.alpha, self.beta]
    }
}

/// Search box used for random initialisation and reflection.
pub const PARAM_BOUNDS: [(f64, f64); 5] = [(0.0, 2.0), (0.0, 1.0), (0.0, 1.0), (0.0, 3.0), (0.0, 3.0)];

#[derive(Debug, Clone)]
pub struct PidState {
    integral: Vec2,
    prev_error: Vec2,
    period: f64,
    /// Integral output authority; the accumulator bound is this over K_I.
    windup_velocity: f64,
}

impl PidState {
    pub fn new(period: f64, windup_velocity: f64) -> Self {
        Self {
            integral: Vec2::zeros(),
            prev_error: Vec2::zeros(),
            period,
            windup_velocity,
        }
    }

    /// Clears the integrator and seeds the derivative memory with the
    /// current error so the first step has no derivative kick.
    pub fn reset(&mut self, current_error: Vec2) {
        self.integral = Vec2::zeros();
        self.prev_error = current_error;
    }

    pub fn integral(&self) -> Vec2 {
        self.integral
    }

    pub fn prev_error(&self) -> Vec2 {
        self.prev_error
    }

    pub fn windup_bound(&self, ki: f64) -> f64 {
        self.windup_velocity / ki.max(1e-6)
    }

    pub fn step(&mut self, error: Vec2, gains: &ControllerParams) -> Result<Vec2, ControllerFault> {
        if !(error.x.is_finite() && error.y.is_finite()) {
            return Err(ControllerFault::NonFiniteError(error.x, error.y));
        }
        let t = self.period;
        let accumulated = self.integral + error * t;
        let out = error * gains.kp + accumulated * gains.ki + (error - self.prev_error) * (gains.kd / t);
        let bound = self.windup_bound(gains.ki);
        self.integral = accumulated.map(|v| v.clamp(-bound, bound));
        self.prev_error = error;
        Ok(out)
    }
}

/// Discrete PID step. A non-finite error leaves the state untouched and
/// commands zero velocity alongside the fault.
pub fn pid_step(state: &mut PidState, error: Vec2, gains: &ControllerParams) -> (Vec2, Option<ControllerFault>) {
    match state.step(error, gains) {
        Ok(v) => (v, None),
        Err(fault) => (Vec2::zeros(), Some(fault)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescentConfig {
    pub v_max: f64,
    pub v_min: f64,
    /// Fixed downward speed replacing the altitude law, when set.
    pub constant_speed: Option<f64>,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self { v_max: 1.5, v_min: 0.03, constant_speed: None }
    }
}

impl DescentConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(v) = self.constant_speed {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config("descent.constant_speed must be positive"));
            }
        }
        if self.v_max > self.v_min && self.v_min > 0.0 {
            Ok(())
        } else {
            Err(Error::config("descent requires v_max > v_min > 0"))
        }
    }
}

/// Downward speed magnitude at range height `h`.
pub fn descent_speed(h: f64, alpha: f64, cfg: &DescentConfig) -> f64 {
    if let Some(v) = cfg.constant_speed {
        return v;
    }
    0.5 * cfg.v_max * ((alpha * h.max(0.0) - 3.0).tanh() + 1.0) + cfg.v_min
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RampConfig {
    /// Slew per control tick, m/s.
    pub step: f64,
    /// Pass-through band, m/s.
    pub band: f64,
}

impl Default for RampConfig {
    fn default() -> Self {
        Self { step: 0.05, band: 0.1 }
    }
}

// Guards the band comparisons against accumulated rounding in the
// repeated +/- step updates.
const RAMP_EPS: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct RampState {
    output: Vec2,
    cfg: RampConfig,
    elapsed: f64,
    duration: f64,
    dt: f64,
}

impl RampState {
    pub fn new(cfg: RampConfig, duration: f64, dt: f64) -> Self {
        Self {
            output: Vec2::zeros(),
            cfg,
            elapsed: 0.0,
            duration,
            dt,
        }
    }

    /// Restarts the clock with the ramp output at `initial`.
    pub fn restart(&mut self, initial: Vec2, duration: f64) {
        self.output = initial;
        self.elapsed = 0.0;
        self.duration = duration;
    }

    pub fn set_duration(&mut self, duration: f64) {
        self.duration = duration;
    }

    pub fn output(&self) -> Vec2 {
        self.output
    }

    pub fn elapsed(&self) -> f64 {
        self.elapsed
    }

    pub fn is_active(&self) -> bool {
        self.elapsed < self.duration
    }

    pub fn step(&mut self, target: Vec2) -> Vec2 {
        let active = self.is_active();
        let (lambda, delta) = (self.cfg.step, self.cfg.band);
        for axis in 0..2 {
            let v_r = self.output[axis];
            let v = target[axis];
            self.output[axis] = if active && v > v_r + delta + RAMP_EPS {
                v_r + lambda
            } else if active && v < v_r - delta - RAMP_EPS {
                v_r - lambda
            } else {
                v
            };
        }
        self.elapsed += self.dt;
        self.output
    }
}

pub fn ramp_step(state: &mut RampState, v_xy: Vec2) -> Vec2 {
    state.step(v_xy)
}

/// Where the controller takes its gains from each tick.
#[derive(Debug, Clone)]
pub enum GainSource {
    Constant(ControllerParams),
    Scheduled { schedule: Arc<GainSchedule>, alpha: f64 },
}

impl GainSource {
    pub fn gains(&self, h: f64, boat_speed: f64) -> Result<ControllerParams, ControllerFault> {
        match self {
            GainSource::Constant(p) => Ok(*p),
            GainSource::Scheduled { schedule, alpha } => schedule_gains(h, boat_speed, Some(schedule), *alpha),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            GainSource::Constant(_) => "constant",
            GainSource::Scheduled { .. } => "scheduled",
        }
    }
}

/// Looks up (K_P, K_I, K_D, beta) at the clamped operating point; alpha is
/// passed through unchanged.
pub fn schedule_gains(
    h: f64,
    boat_speed: f64,
    schedule: Option<&GainSchedule>,
    alpha: f64,
) -> Result<ControllerParams, ControllerFault> {
    let schedule = schedule.ok_or(ControllerFault::Untrained)?;
    let out = schedule.predict(h, boat_speed);
    if out.len() != 4 {
        return Err(ControllerFault::Untrained);
    }
    Ok(ControllerParams::new(out[0], out[1], out[2], alpha, out[3]))
}
