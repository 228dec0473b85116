//! Fixed-step vehicle, boat and contact simulation.
//!
//! The vehicle is modelled as a velocity-commanded multirotor whose inner
//! loops are abstracted into a per-axis first-order lag. Roll and pitch are
//! not states of the dynamics; they are reconstructed from the commanded
//! horizontal acceleration with a small-angle thrust-tilt model so that the
//! camera footprint and the attitude-rate cost terms respond to aggressive
//! commands. Yaw is held at zero.
//!
//! The boat is kinematic: every [`MotionPattern`] has a closed-form pose at
//! time `t`, so there is no integration drift on the target side.

use std::f64::consts::TAU;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Vec2 = Vector2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Physics and control period, seconds.
    pub dt: f64,
    pub max_speed: f64,
    pub max_tilt: f64,
    /// Velocity lag time constant, seconds.
    pub tau: f64,
    pub gravity: f64,
    pub episode_timeout: f64,
    /// Contact threshold between the landing legs and the deck, meters.
    pub touchdown_epsilon: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            max_speed: 11.0,
            max_tilt: 0.5,
            tau: 0.3,
            gravity: 9.81,
            episode_timeout: 60.0,
            touchdown_epsilon: 0.02,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sim.dt", self.dt),
            ("sim.tau", self.tau),
            ("sim.episode_timeout", self.episode_timeout),
            ("sim.max_speed", self.max_speed),
            ("sim.max_tilt", self.max_tilt),
            ("sim.gravity", self.gravity),
            ("sim.touchdown_epsilon", self.touchdown_epsilon),
        ];
        for (key, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::config(format!("{key} must be positive, got {value}")));
            }
        }
        // The explicit lag update is a convex blend only while dt <= tau.
        if self.dt > self.tau {
            return Err(Error::config(format!(
                "sim.dt ({}) must not exceed sim.tau ({})",
                self.dt, self.tau
            )));
        }
        Ok(())
    }

    pub fn ticks(&self, seconds: f64) -> usize {
        (seconds / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DroneState {
    pub position: Vec3,
    pub velocity: Vec3,
    /// Acceleration realised over the last step (world frame, gravity excluded).
    pub acceleration: Vec3,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub roll_rate: f64,
    pub pitch_rate: f64,
    pub time: f64,
}

impl DroneState {
    pub fn at_rest(position: Vec3) -> Self {
        Self::moving(position, Vec3::zeros())
    }

    pub fn moving(position: Vec3, velocity: Vec3) -> Self {
        Self {
            position,
            velocity,
            acceleration: Vec3::zeros(),
            roll: 0.0,
            pitch: 0.0,
            yaw: 0.0,
            roll_rate: 0.0,
            pitch_rate: 0.0,
            time: 0.0,
        }
    }

    pub fn horizontal_position(&self) -> Vec2 {
        self.position.xy()
    }

    pub fn horizontal_velocity(&self) -> Vec2 {
        self.velocity.xy()
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SimFault {
    #[error("non-finite velocity command {0:?}")]
    NonFiniteCommand([f64; 3]),
    #[error("vehicle reached the water at ({x:.3}, {y:.3}) without deck contact")]
    Crash { x: f64, y: f64 },
}

fn clamp_norm(v: Vec3, limit: f64) -> Vec3 {
    let n = v.norm();
    if n > limit {
        v * (limit / n)
    } else {
        v
    }
}

/// Advances the vehicle by one fixed step under a velocity command.
pub fn step_drone(state: &DroneState, v_cmd: Vec3, cfg: &SimConfig) -> Result<DroneState, SimFault> {
    if !v_cmd.iter().all(|c| c.is_finite()) {
        return Err(SimFault::NonFiniteCommand([v_cmd.x, v_cmd.y, v_cmd.z]));
    }
    let cmd = clamp_norm(v_cmd, cfg.max_speed);
    let accel = (cmd - state.velocity) / cfg.tau;
    let velocity = state.velocity + accel * cfg.dt;
    let position = state.position + velocity * cfg.dt;

    let pitch = (accel.x / cfg.gravity).clamp(-cfg.max_tilt, cfg.max_tilt);
    let roll = (-accel.y / cfg.gravity).clamp(-cfg.max_tilt, cfg.max_tilt);

    Ok(DroneState {
        position,
        velocity,
        acceleration: accel,
        roll,
        pitch,
        yaw: 0.0,
        roll_rate: (roll - state.roll) / cfg.dt,
        pitch_rate: (pitch - state.pitch) / cfg.dt,
        time: state.time + cfg.dt,
    })
}

/// Sinusoidal wave response of the boat.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WaveDisturbance {
    pub heave_amplitude: f64,
    pub heave_frequency: f64,
    pub roll_amplitude: f64,
    pub pitch_amplitude: f64,
    pub rock_frequency: f64,
}

impl WaveDisturbance {
    fn heave(&self, t: f64) -> (f64, f64) {
        let w = TAU * self.heave_frequency;
        (
            self.heave_amplitude * (w * t).sin(),
            self.heave_amplitude * w * (w * t).cos(),
        )
    }

    fn rock(&self, t: f64) -> (f64, f64) {
        let w = TAU * self.rock_frequency;
        (
            self.roll_amplitude * (w * t).sin(),
            self.pitch_amplitude * (w * t).cos(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedSegment {
    pub start: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Motion {
    Static,
    Linear { speed: f64, heading: f64 },
    /// Piecewise-constant speed along a fixed heading; segments sorted by start.
    LinearVariable { heading: f64, profile: Vec<SpeedSegment> },
    /// Counter-clockwise circle entered along +x with the given tangential speed.
    Circular { x_speed: f64, angular_speed: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionPattern {
    motion: Motion,
    start: Vec2,
    platform_height: f64,
    deck_half_extent: f64,
    disturbance: Option<WaveDisturbance>,
}

impl MotionPattern {
    pub fn new(motion: Motion, start: Vec2, platform_height: f64) -> Result<Self> {
        if !(platform_height > 0.0) {
            return Err(Error::config(format!(
                "platform height must be positive, got {platform_height}"
            )));
        }
        match &motion {
            Motion::Static => {}
            Motion::Linear { speed, heading } => {
                if !speed.is_finite() || *speed < 0.0 || !heading.is_finite() {
                    return Err(Error::config("linear motion needs a finite non-negative speed"));
                }
            }
            Motion::LinearVariable { profile, heading } => {
                if profile.is_empty() || profile[0].start != 0.0 || !heading.is_finite() {
                    return Err(Error::config(
                        "speed profile must be non-empty and start at t = 0",
                    ));
                }
                if profile.windows(2).any(|w| w[1].start <= w[0].start) {
                    return Err(Error::config("speed profile start times must increase"));
                }
                if profile.iter().any(|s| !s.speed.is_finite() || s.speed < 0.0) {
                    return Err(Error::config("speed profile speeds must be finite and >= 0"));
                }
            }
            Motion::Circular {
                x_speed,
                angular_speed,
            } => {
                if !(*angular_speed > 0.0) || !x_speed.is_finite() || *x_speed < 0.0 {
                    return Err(Error::config(
                        "circular motion needs angular_speed > 0 and x_speed >= 0",
                    ));
                }
            }
        }
        Ok(Self {
            motion,
            start,
            platform_height,
            deck_half_extent: 0.5,
            disturbance: None,
        })
    }

    pub fn stationary(start: Vec2, platform_height: f64) -> Result<Self> {
        Self::new(Motion::Static, start, platform_height)
    }

    pub fn with_deck_half_extent(mut self, half_extent: f64) -> Self {
        self.deck_half_extent = half_extent;
        self
    }

    pub fn with_disturbance(mut self, disturbance: Option<WaveDisturbance>) -> Self {
        self.disturbance = disturbance;
        self
    }

    pub fn motion(&self) -> &Motion {
        &self.motion
    }

    pub fn start(&self) -> Vec2 {
        self.start
    }

    pub fn platform_height(&self) -> f64 {
        self.platform_height
    }

    pub fn deck_half_extent(&self) -> f64 {
        self.deck_half_extent
    }

    /// Nominal ground speed at `t`, ignoring wave motion.
    pub fn speed_at(&self, t: f64) -> f64 {
        step_boat(self, t).platform_velocity.xy().norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoatState {
    /// Center of the deck's top surface.
    pub platform_position: Vec3,
    pub platform_velocity: Vec3,
    pub heading: f64,
    pub platform_height: f64,
    pub deck_roll: f64,
    pub deck_pitch: f64,
    pub deck_half_extent: f64,
}

impl BoatState {
    /// Whether a world-frame horizontal point lies over the deck footprint.
    pub fn is_over_deck(&self, point: Vec2) -> bool {
        let offset = point - self.platform_position.xy();
        let (s, c) = self.heading.sin_cos();
        let along = c * offset.x + s * offset.y;
        let across = -s * offset.x + c * offset.y;
        along.abs() <= self.deck_half_extent && across.abs() <= self.deck_half_extent
    }
}

fn unit(heading: f64) -> Vec2 {
    Vec2::new(heading.cos(), heading.sin())
}

/// Closed-form boat pose at time `t` (t >= 0).
pub fn step_boat(pattern: &MotionPattern, t: f64) -> BoatState {
    let t = t.max(0.0);
    let (offset, velocity, heading) = match &pattern.motion {
        Motion::Static => (Vec2::zeros(), Vec2::zeros(), 0.0),
        Motion::Linear { speed, heading } => {
            let dir = unit(*heading);
            (dir * (speed * t), dir * *speed, *heading)
        }
        Motion::LinearVariable { heading, profile } => {
            let dir = unit(*heading);
            let mut distance = 0.0;
            let mut speed = profile[0].speed;
            for (i, seg) in profile.iter().enumerate() {
                if seg.start > t {
                    break;
                }
                let end = profile.get(i + 1).map_or(t, |next| next.start.min(t));
                distance += seg.speed * (end - seg.start);
                speed = seg.speed;
            }
            (dir * distance, dir * speed, *heading)
        }
        Motion::Circular {
            x_speed,
            angular_speed,
        } => {
            let radius = x_speed / angular_speed;
            let phase = angular_speed * t;
            let (s, c) = phase.sin_cos();
            (
                Vec2::new(radius * s, radius * (1.0 - c)),
                Vec2::new(x_speed * c, x_speed * s),
                phase,
            )
        }
    };

    let (heave, heave_rate) = pattern.disturbance.map_or((0.0, 0.0), |d| d.heave(t));
    let (deck_roll, deck_pitch) = pattern.disturbance.map_or((0.0, 0.0), |d| d.rock(t));
    let xy = pattern.start + offset;
    BoatState {
        platform_position: Vec3::new(xy.x, xy.y, pattern.platform_height + heave),
        platform_velocity: Vec3::new(velocity.x, velocity.y, heave_rate),
        heading,
        platform_height: pattern.platform_height,
        deck_roll,
        deck_pitch,
        deck_half_extent: pattern.deck_half_extent,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TouchdownReport {
    pub landed: bool,
    /// Horizontal distance between vehicle and deck center, meters.
    pub distance: f64,
    /// Vertical speed at contact (signed, up positive), m/s.
    pub vertical_speed: f64,
    /// Vertical specific force at contact, gravity included, m/s^2.
    pub vertical_accel: f64,
}

/// Checks for deck contact. Reaching the water surface is a crash.
pub fn detect_touchdown(
    drone: &DroneState,
    boat: &BoatState,
    epsilon: f64,
    gravity: f64,
) -> Result<TouchdownReport, SimFault> {
    let gap = drone.position.z - boat.platform_position.z;
    let distance = (drone.horizontal_position() - boat.platform_position.xy()).norm();
    let landed = gap <= epsilon && boat.is_over_deck(drone.horizontal_position());
    if !landed && drone.position.z <= 0.0 {
        return Err(SimFault::Crash {
            x: drone.position.x,
            y: drone.position.y,
        });
    }
    Ok(TouchdownReport {
        landed,
        distance,
        vertical_speed: drone.velocity.z,
        vertical_accel: drone.acceleration.z + gravity,
    })
}
