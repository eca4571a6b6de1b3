//! Run configuration read from TOML.

use std::path::{Path, PathBuf};

use navlab_core::assist::AssistParams;
use navlab_core::conformal::ExtractionConfig;
use navlab_core::controller::{ErrorForm, Gains, TubeParams};
use navlab_core::gridmap::{GridGeometry, InflationConfig, Obstacle, SensorModel};
use navlab_core::sim::{DisturbanceModel, Scenario, TRAINING_LAP_TIMES};
use navlab_core::{Limits, Pose};
use serde::{Deserialize, Serialize};

use crate::LabError;

/// Top-level configuration shared by every subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seed for subsampling, planning and plant noise.
    pub seed: u64,
    /// Directory for artifacts.
    pub output_dir: PathBuf,
    /// Training and calibration.
    pub train: TrainConfig,
    /// Tracking experiment.
    pub track: TrackConfig,
    /// Assist service.
    pub serve: ServeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: PathBuf::from("out"),
            train: TrainConfig::default(),
            track: TrackConfig::default(),
            serve: ServeConfig::default(),
        }
    }
}

/// Training data generation and calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Disturbance preset name.
    pub preset: String,
    /// Risk level `ε`.
    pub epsilon: f64,
    /// Subsample size `L`.
    pub subsample: usize,
    /// Laps per lap time.
    pub laps: usize,
    /// Lap times of the training figure-8 (s).
    pub lap_times: Vec<f64>,
    /// Sampling period (s).
    pub dt: f64,
    /// Residual extraction settings.
    pub extraction: ExtractionConfig,
    /// Tube coefficients for the printed radii.
    pub tube: TubeParams,
    /// Existing tuple file to calibrate instead of simulating.
    pub tuples: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            preset: "acceptance".into(),
            epsilon: 0.01,
            subsample: 3000,
            laps: 3,
            lap_times: TRAINING_LAP_TIMES.to_vec(),
            dt: 0.05,
            extraction: ExtractionConfig::default(),
            tube: TubeParams::default(),
            tuples: None,
        }
    }
}

impl TrainConfig {
    /// The named disturbance preset.
    pub fn model(&self) -> Result<DisturbanceModel, LabError> {
        DisturbanceModel::preset(&self.preset)
            .ok_or_else(|| LabError::Config(format!("unknown disturbance preset {:?}", self.preset)))
    }
}

/// Tracking experiment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackConfig {
    /// Bounds document; defaults to `<output_dir>/bounds.toml`.
    pub bounds: Option<PathBuf>,
    /// Scenario; its `bounds` field is replaced by the document.
    pub scenario: Scenario,
}

/// Driver-assist service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServeConfig {
    /// Listen address.
    pub bind: String,
    /// Control and broadcast rate (Hz).
    pub tick_hz: f64,
    /// Initial risk level.
    pub epsilon: f64,
    /// Starting pose.
    pub start: Pose,
    /// Ground-truth obstacles.
    pub obstacles: Vec<Obstacle>,
    /// Plant discrepancy of the simulated vehicle.
    pub disturbance: DisturbanceModel,
    /// Vehicle radius (m).
    pub r_ego: f64,
    /// Map geometry.
    pub geometry: GridGeometry,
    /// Range sensor.
    pub sensor: SensorModel,
    /// Inflation settings.
    pub inflation: InflationConfig,
    /// Assist planner.
    pub assist: AssistParams,
    /// Ancillary gains.
    pub gains: Gains,
    /// Ancillary error model.
    pub form: ErrorForm,
    /// Actuator limits and control period.
    pub limits: Limits,
    /// Tube coefficients.
    pub tube: TubeParams,
    /// Calibration data used for every risk level.
    pub train: TrainConfig,
}

/// Walls of a 9 m square room with two pillars.
pub fn default_room() -> Vec<Obstacle> {
    vec![
        Obstacle::Box { min: [-4.6, -4.6], max: [4.6, -4.4] },
        Obstacle::Box { min: [-4.6, 4.4], max: [4.6, 4.6] },
        Obstacle::Box { min: [-4.6, -4.4], max: [-4.4, 4.4] },
        Obstacle::Box { min: [4.4, -4.4], max: [4.6, 4.4] },
        Obstacle::Box { min: [2.0, -1.0], max: [2.3, 1.0] },
        Obstacle::Disc { center: [-1.5, 2.0], radius: 0.4 },
    ]
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            bind: "127.0.0.1:8765".into(),
            tick_hz: 20.0,
            epsilon: 0.01,
            start: Pose::new(0.0, 0.0, 0.0),
            obstacles: default_room(),
            disturbance: DisturbanceModel::acceptance(),
            r_ego: 0.39,
            geometry: GridGeometry::default(),
            sensor: SensorModel::default(),
            inflation: InflationConfig::default(),
            assist: AssistParams::default(),
            gains: Gains::default(),
            form: ErrorForm::Reduced,
            limits: Limits::default(),
            tube: TubeParams::default(),
            train: TrainConfig { laps: 2, ..TrainConfig::default() },
        }
    }
}

impl RunConfig {
    /// Parse TOML text.
    pub fn from_toml(text: &str) -> Result<Self, LabError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read and parse a file.
    pub fn load(path: &Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// TOML text.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Check ranges that the parser cannot.
    pub fn validate(&self) -> Result<(), LabError> {
        for (what, eps) in [("train.epsilon", self.train.epsilon), ("serve.epsilon", self.serve.epsilon)] {
            if !(eps > 0.0 && eps < 1.0) {
                return Err(LabError::Config(format!("{what} must lie in (0, 1)")));
            }
        }
        if !(self.serve.tick_hz > 0.0) {
            return Err(LabError::Config("serve.tick_hz must be positive".into()));
        }
        self.train.model()?;
        self.serve.train.model()?;
        self.track.scenario.validate().map_err(|e| LabError::Config(format!("track.scenario: {e}")))?;
        self.serve.limits.validate().map_err(|e| LabError::Config(format!("serve.limits: {e}")))?;
        Ok(())
    }

    /// Default bounds path.
    pub fn bounds_path(&self) -> PathBuf {
        self.track.bounds.clone().unwrap_or_else(|| self.output_dir.join("bounds.toml"))
    }
}
