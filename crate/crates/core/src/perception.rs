//! Camera/marker detectability, attitude-compensated target position and
//! the sampled-averaging target velocity filter.
//!
//! Frames: world and body are both x-forward, y-left, z-up; with yaw held
//! at zero they differ only by roll and pitch. The camera looks along its
//! own +z, which the default mount points at body -z.

use std::collections::VecDeque;

use nalgebra::{Matrix3, Rotation3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::sim::{BoatState, DroneState, Vec2, Vec3};

/// Body-to-level rotation for the given roll and pitch (yaw = 0).
pub fn attitude_rotation(roll: f64, pitch: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vec3::y_axis(), pitch) * Rotation3::from_axis_angle(&Vec3::x_axis(), roll)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraModel {
    pub fov_half_angle: f64,
    /// Extra rotation of the camera about the body z axis, radians.
    pub mount_yaw: f64,
    pub pixel_width: u32,
    pub detect_min_px: f64,
    pub detect_max_px: f64,
    /// Pose noise standard deviation as a fraction of camera depth.
    pub noise_scale: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            fov_half_angle: 0.6,
            mount_yaw: 0.0,
            pixel_width: 640,
            detect_min_px: 12.0,
            detect_max_px: 190.0,
            noise_scale: 0.01,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.fov_half_angle > 0.0 && self.fov_half_angle < std::f64::consts::FRAC_PI_2) {
            return Err(Error::config("camera.fov_half_angle must lie in (0, pi/2)"));
        }
        if !(self.detect_min_px > 0.0 && self.detect_min_px < self.detect_max_px) {
            return Err(Error::config(
                "camera.detect_min_px must be positive and below camera.detect_max_px",
            ));
        }
        if self.pixel_width == 0 || !(self.noise_scale >= 0.0) {
            return Err(Error::config("camera.pixel_width and camera.noise_scale are invalid"));
        }
        Ok(())
    }

    /// Focal length in pixels implied by the field of view and image width.
    pub fn focal_px(&self) -> f64 {
        0.5 * self.pixel_width as f64 / self.fov_half_angle.tan()
    }

    /// Camera-to-body rotation: optical axis to body -z, image x to body x.
    pub fn mount_rotation(&self) -> Rotation3<f64> {
        let flip = Rotation3::from_matrix_unchecked(Matrix3::new(
            1.0, 0.0, 0.0, //
            0.0, -1.0, 0.0, //
            0.0, 0.0, -1.0,
        ));
        Rotation3::from_axis_angle(&Vec3::z_axis(), self.mount_yaw) * flip
    }

    /// Apparent side length in pixels of a square of `side` meters at `depth`.
    pub fn apparent_px(&self, side: f64, depth: f64) -> f64 {
        side * self.focal_px() / depth
    }

    /// Depth at which a square of `side` meters spans exactly `px` pixels.
    pub fn depth_for_px(&self, side: f64, px: f64) -> f64 {
        side * self.focal_px() / px
    }

    fn sees(&self, p_cam: &Vec3, side: f64) -> bool {
        if p_cam.z <= 0.0 {
            return false;
        }
        let off_axis = p_cam.xy().norm().atan2(p_cam.z);
        let px = self.apparent_px(side, p_cam.z);
        off_axis <= self.fov_half_angle && px >= self.detect_min_px && px <= self.detect_max_px
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarkerMode {
    Single,
    Dual,
}

impl std::fmt::Display for MarkerMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MarkerMode::Single => "single",
            MarkerMode::Dual => "dual",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarkerSpec {
    pub large_side: f64,
    pub small_side: f64,
    pub separation: f64,
    pub mode: MarkerMode,
}

impl Default for MarkerSpec {
    fn default() -> Self {
        Self {
            large_side: 0.16,
            small_side: 0.055,
            separation: 0.01,
            mode: MarkerMode::Dual,
        }
    }
}

impl MarkerSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.large_side > self.small_side && self.small_side > 0.0) {
            return Err(Error::config("marker sides must satisfy large > small > 0"));
        }
        Ok(())
    }

    pub fn with_mode(mut self, mode: MarkerMode) -> Self {
        self.mode = mode;
        self
    }

    /// Small-tag center relative to the large-tag center, in the deck frame.
    pub fn small_offset(&self) -> Vec2 {
        Vec2::new(0.5 * self.large_side + self.separation + 0.5 * self.small_side, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActiveMarker {
    Large,
    Small,
    None,
}

impl ActiveMarker {
    pub fn as_str(&self) -> &'static str {
        match self {
            ActiveMarker::Large => "large",
            ActiveMarker::Small => "small",
            ActiveMarker::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    /// Deck center relative to the vehicle, roll/pitch compensated. `None`
    /// when no marker is detectable.
    pub target_in_body: Option<Vec3>,
    pub active_marker: ActiveMarker,
    /// Range-sensor height above the surface directly below, meters.
    pub range_altitude: f64,
    pub timestamp: f64,
}

impl Observation {
    pub fn marker_visible(&self) -> bool {
        self.target_in_body.is_some()
    }

    pub fn horizontal_error(&self) -> Option<Vec2> {
        self.target_in_body.map(|p| p.xy())
    }
}

/// Camera-frame coordinates of a world point.
pub fn world_to_camera(drone: &DroneState, cam: &CameraModel, point: Vec3) -> Vec3 {
    let body_to_level = attitude_rotation(drone.roll, drone.pitch);
    let rel = point - drone.position;
    cam.mount_rotation().inverse() * (body_to_level.inverse() * rel)
}

/// Compensates a camera-frame measurement for mount and attitude.
pub fn camera_to_level(drone: &DroneState, cam: &CameraModel, p_cam: Vec3) -> Vec3 {
    attitude_rotation(drone.roll, drone.pitch) * (cam.mount_rotation() * p_cam)
}

/// Range-sensor reading: height over the deck when above it, else over water.
pub fn range_altitude(drone: &DroneState, boat: &BoatState) -> f64 {
    let surface = if boat.is_over_deck(drone.horizontal_position()) {
        boat.platform_position.z
    } else {
        0.0
    };
    (drone.position.z - surface).max(0.0)
}

/// Noise-free observation.
pub fn observe(drone: &DroneState, boat: &BoatState, cam: &CameraModel, marker: &MarkerSpec) -> Observation {
    observe_noisy(drone, boat, cam, marker, Vec3::zeros())
}

/// Observation with camera-frame pose noise. `unit_noise` holds standard
/// normal draws that are scaled by `noise_scale * depth`.
pub fn observe_noisy(
    drone: &DroneState,
    boat: &BoatState,
    cam: &CameraModel,
    marker: &MarkerSpec,
    unit_noise: Vec3,
) -> Observation {
    let center = boat.platform_position;
    let p_large = world_to_camera(drone, cam, center);

    let active = if cam.sees(&p_large, marker.large_side) {
        ActiveMarker::Large
    } else if marker.mode == MarkerMode::Dual {
        let (s, c) = boat.heading.sin_cos();
        let off = marker.small_offset();
        let small_center = center + Vec3::new(c * off.x - s * off.y, s * off.x + c * off.y, 0.0);
        if cam.sees(&world_to_camera(drone, cam, small_center), marker.small_side) {
            ActiveMarker::Small
        } else {
            ActiveMarker::None
        }
    } else {
        ActiveMarker::None
    };

    let target_in_body = (active != ActiveMarker::None).then(|| {
        let sigma = cam.noise_scale * p_large.z.abs();
        camera_to_level(drone, cam, p_large + unit_noise * sigma)
    });

    Observation {
        target_in_body,
        active_marker: active,
        range_altitude: range_altitude(drone, boat),
        timestamp: drone.time,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub window: usize,
    /// Per-sample speeds above this are treated as outliers, m/s.
    pub outlier_threshold: f64,
    /// Consecutive rejections after which the filter restarts from the newest sample.
    pub max_rejections: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            window: 5,
            outlier_threshold: 10.0,
            max_rejections: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, Error, PartialEq)]
pub enum SampleRejected {
    #[error("marker not visible")]
    NotVisible,
    #[error("timestamp {got} does not advance past {last}")]
    NonMonotonic { last: f64, got: f64 },
    #[error("implied speed {0:.3} m/s exceeds the outlier threshold")]
    Outlier(f64),
}

/// Moving average of the last `window` finite-difference velocities of the
/// target's world-frame horizontal position.
#[derive(Debug, Clone)]
pub struct VelocityEstimator {
    cfg: EstimatorConfig,
    last: Option<(Vec2, f64)>,
    velocities: VecDeque<Vec2>,
    rejections: usize,
}

impl VelocityEstimator {
    pub fn new(cfg: EstimatorConfig) -> Self {
        Self {
            cfg,
            last: None,
            velocities: VecDeque::with_capacity(cfg.window + 1),
            rejections: 0,
        }
    }

    pub fn reset(&mut self) {
        self.last = None;
        self.velocities.clear();
        self.rejections = 0;
    }

    pub fn is_ready(&self) -> bool {
        self.cfg.window > 0 && self.velocities.len() >= self.cfg.window
    }

    pub fn estimate(&self) -> Option<Vec2> {
        self.is_ready()
            .then(|| self.velocities.iter().sum::<Vec2>() / self.velocities.len() as f64)
    }

    pub fn push(&mut self, position: Vec2, t: f64) -> Result<(), SampleRejected> {
        let Some((last_pos, last_t)) = self.last else {
            self.last = Some((position, t));
            return Ok(());
        };
        if !(t > last_t) {
            return Err(SampleRejected::NonMonotonic { last: last_t, got: t });
        }
        let v = (position - last_pos) / (t - last_t);
        let speed = v.norm();
        if !(speed <= self.cfg.outlier_threshold) {
            self.rejections += 1;
            if self.rejections >= self.cfg.max_rejections {
                // Persistent disagreement means the track itself moved.
                self.reset();
                self.last = Some((position, t));
            }
            return Err(SampleRejected::Outlier(speed));
        }
        self.rejections = 0;
        self.last = Some((position, t));
        self.velocities.push_back(v);
        while self.velocities.len() > self.cfg.window {
            self.velocities.pop_front();
        }
        Ok(())
    }
}

/// Pushes a visible observation into the filter (converted to the world
/// frame with the vehicle pose) and returns the current estimate.
pub fn estimate_target_velocity(
    est: &mut VelocityEstimator,
    obs: &Observation,
    drone: &DroneState,
) -> Result<Option<Vec2>, SampleRejected> {
    let rel = obs.horizontal_error().ok_or(SampleRejected::NotVisible)?;
    est.push(drone.horizontal_position() + rel, obs.timestamp)?;
    Ok(est.estimate())
}
