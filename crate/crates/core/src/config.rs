//! Run configuration and single-episode scenarios, both read from TOML
//! with dotted keys such as `sim.dt = 0.02` or `[pso]` tables.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::controller::{ControllerParams, DescentConfig, GainSource, RampConfig};
use crate::error::{Error, Result};
use crate::experiments::ExperimentConfig;
use crate::mission::{EpisodeSettings, EpisodeSpec, MissionConfig, Regime};
use crate::mlp::TrainConfig;
use crate::perception::{CameraModel, EstimatorConfig, MarkerSpec};
use crate::pso::PsoConfig;
use crate::sim::{DroneState, Motion, MotionPattern, SimConfig, Vec2, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Directory for convergence logs, trajectories and reports.
    pub out_dir: PathBuf,
    /// Descending-regime result; its alpha feeds the tracking regime.
    pub descend: PathBuf,
    /// Gain table from the grid run.
    pub table: PathBuf,
    pub schedule: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            out_dir: "out".into(),
            descend: "out/descend.csv".into(),
            table: "out/grid.csv".into(),
            schedule: "out/schedule.txt".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub camera: CameraModel,
    pub marker: MarkerSpec,
    pub mission: MissionConfig,
    pub descent: DescentConfig,
    pub ramp: RampConfig,
    pub estimator: EstimatorConfig,
    pub pso: PsoConfig,
    pub training: crate::training::TrainingConfig,
    pub nn: TrainConfig,
    pub experiment: ExperimentConfig,
    pub paths: PathsConfig,
}

fn parse_toml<T: serde::de::DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))
}

impl RunConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let cfg: Self = parse_toml(text, origin)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }

    pub fn settings(&self) -> EpisodeSettings {
        EpisodeSettings {
            sim: self.sim,
            camera: self.camera,
            marker: self.marker,
            mission: self.mission,
            descent: self.descent,
            ramp: self.ramp,
            estimator: self.estimator,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.settings().validate()?;
        self.pso.validate()?;
        self.training.validate()?;
        self.experiment.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoatMotion {
    Static,
    Linear,
    Circular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoatScenario {
    pub motion: BoatMotion,
    /// Ground speed for linear motion, drift along +x for circular motion.
    pub speed: f64,
    /// Heading of linear motion, rad.
    pub heading: f64,
    pub angular_speed: f64,
    pub start: [f64; 2],
    pub platform_height: f64,
}

impl Default for BoatScenario {
    fn default() -> Self {
        Self {
            motion: BoatMotion::Static,
            speed: 0.0,
            heading: 0.0,
            angular_speed: 0.2,
            start: [0.0, 0.0],
            platform_height: 1.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DroneScenario {
    /// Horizontal offset from the deck centre at t = 0.
    pub offset: [f64; 2],
    /// Height above the deck at t = 0.
    pub altitude: f64,
    pub velocity: [f64; 3],
}

impl Default for DroneScenario {
    fn default() -> Self {
        Self {
            offset: [0.0, 0.0],
            altitude: 3.0,
            velocity: [0.0; 3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerMode {
    Scheduled,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerScenario {
    pub mode: ControllerMode,
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub beta: f64,
    /// Falls back to the descending-regime result when absent.
    pub alpha: Option<f64>,
}

impl Default for ControllerScenario {
    fn default() -> Self {
        Self {
            mode: ControllerMode::Scheduled,
            kp: 1.0,
            ki: 0.0,
            kd: 0.0,
            beta: 1.0,
            alpha: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub boat: BoatScenario,
    pub drone: DroneScenario,
    pub controller: ControllerScenario,
    /// Observation noise seed; noiseless when absent.
    pub noise_seed: Option<u64>,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        parse_toml(text, origin)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn motion(&self) -> Motion {
        let b = &self.boat;
        match b.motion {
            BoatMotion::Static => Motion::Static,
            BoatMotion::Linear => Motion::Linear {
                speed: b.speed,
                heading: b.heading,
            },
            BoatMotion::Circular => Motion::Circular {
                x_speed: b.speed,
                angular_speed: b.angular_speed,
            },
        }
    }

    pub fn constant_params(&self, alpha: f64) -> ControllerParams {
        let c = &self.controller;
        ControllerParams::new(c.kp, c.ki, c.kd, alpha, c.beta)
    }

    /// Full-mission episode for this scenario with the given gains.
    pub fn episode(&self, settings: &EpisodeSettings, gains: GainSource) -> Result<EpisodeSpec> {
        let b = &self.boat;
        let pattern = MotionPattern::new(self.motion(), Vec2::new(b.start[0], b.start[1]), b.platform_height)?;
        let d = &self.drone;
        let spec = EpisodeSpec {
            settings: *settings,
            initial: DroneState::moving(
                Vec3::new(b.start[0] + d.offset[0], b.start[1] + d.offset[1], b.platform_height + d.altitude),
                Vec3::new(d.velocity[0], d.velocity[1], d.velocity[2]),
            ),
            pattern,
            gains,
            noise_seed: self.noise_seed,
            regime: Regime::FullMission,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_default() {
        let cfg = RunConfig::from_toml_str("", "empty").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn dotted_keys_and_tables_agree() {
        let a = RunConfig::from_toml_str("sim.dt = 0.02\npso.swarm_size = 7\n", "a").unwrap();
        let b = RunConfig::from_toml_str("[sim]\ndt = 0.02\n[pso]\nswarm_size = 7\n", "b").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.sim.dt, 0.02);
        assert_eq!(a.pso.swarm_size, 7);
    }

    #[test]
    fn unknown_keys_are_named() {
        for (text, key) in [("sim.dtt = 0.02", "dtt"), ("bogus = 1", "bogus"), ("[pso]\nswarm = 3", "swarm")] {
            let err = RunConfig::from_toml_str(text, "cfg").unwrap_err().to_string();
            assert!(err.contains(key), "{err}");
        }
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml_str(&cfg.to_toml(), "dump").unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::from_toml_str("pso.swarm_size = 0", "cfg").is_err());
        assert!(RunConfig::from_toml_str("sim.dt = -1.0", "cfg").is_err());
    }

    #[test]
    fn scenario_places_drone_relative_to_the_deck() {
        let s = ScenarioConfig::from_toml_str(
            "boat.start = [2.0, 1.0]\ndrone.offset = [0.5, 0.0]\ndrone.altitude = 4.0\n",
            "s",
        )
        .unwrap();
        let spec = s
            .episode(&EpisodeSettings::default(), GainSource::Constant(s.constant_params(1.0)))
            .unwrap();
        assert_eq!(spec.initial.position, Vec3::new(2.5, 1.0, 5.25));
    }
}
