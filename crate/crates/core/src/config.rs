//! The shared TOML configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actuation::{CoilMatrix, SafetyEnvelope};
use crate::codec::QuantizerSpec;
use crate::episode::config_hash;
use crate::expert::ExpertConfig;
use crate::primitive::Thresholds;
use crate::render::SceneSpec;
use crate::robot::{RobotCalibration, RobotModel, SimConfig};

/// Environment variable consulted when no config path is given.
pub const CONFIG_ENV: &str = "TRILEG_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoilSection {
    /// Voltage-to-field matrix, tesla per volt, row-major.
    pub k: CoilMatrix,
    pub v_max: f64,
    pub dv_max: f64,
    /// Half-width of the relative perturbation applied to K per trial.
    pub k_randomization: f64,
}

impl Default for CoilSection {
    fn default() -> Self {
        let env = SafetyEnvelope::default();
        Self { k: CoilMatrix::default(), v_max: env.v_max, dv_max: env.dv_max, k_randomization: 0.0 }
    }
}

impl CoilSection {
    pub fn envelope(&self) -> SafetyEnvelope {
        SafetyEnvelope { v_max: self.v_max, dv_max: self.dv_max }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionSection {
    /// Past frames sent with each observation.
    pub frame_window: usize,
    /// Wall-clock pacing of acts in Hz; unpaced when absent.
    pub pace_hz: Option<f64>,
    pub randomize_pose: bool,
    /// Directory new recordings are written under.
    pub record_root: PathBuf,
    pub scene: SceneSpec,
}

impl Default for SessionSection {
    fn default() -> Self {
        Self { frame_window: 3, pace_hz: None, randomize_pose: false, record_root: PathBuf::from("episodes"), scene: SceneSpec::default() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub coil: CoilSection,
    pub robot: RobotCalibration,
    pub sim: SimConfig,
    pub primitives: Thresholds,
    pub codec: QuantizerSpec,
    pub expert: ExpertConfig,
    pub session: SessionSection,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let cfg = Self::from_toml(&text).map_err(|source| ConfigError::Parse { path: path.to_path_buf(), source })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path`, else the file named by [`CONFIG_ENV`], else defaults.
    pub fn resolve(path: Option<&Path>) -> Result<Self, ConfigError> {
        match path.map(Path::to_path_buf).or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from)) {
            Some(p) => Self::load(&p),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.coil.envelope().validate().map_err(|e| invalid(&e))?;
        if !(self.coil.k_randomization.is_finite() && (0.0..1.0).contains(&self.coil.k_randomization)) {
            return Err(ConfigError::Invalid("k_randomization must lie in [0, 1)".into()));
        }
        self.robot.validate().map_err(|e| invalid(&e))?;
        self.sim.validate().map_err(|e| invalid(&e))?;
        self.primitives.validate().map_err(|e| invalid(&e))?;
        self.codec.validate().map_err(|e| invalid(&e))?;
        self.session.scene.validate().map_err(|e| invalid(&e))?;
        if self.session.frame_window == 0 || self.session.frame_window > 16 {
            return Err(ConfigError::Invalid("frame_window must lie in 1..=16".into()));
        }
        if self.session.pace_hz.is_some_and(|hz| !(hz.is_finite() && hz > 0.0)) {
            return Err(ConfigError::Invalid("pace_hz must be positive".into()));
        }
        Ok(())
    }

    pub fn model(&self) -> RobotModel {
        RobotModel { calibration: self.robot.clone(), coil: self.coil.k }
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }
}
