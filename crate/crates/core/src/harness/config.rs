//! Run configuration: world choice, every module's parameter block and
//! output options. A run is reproducible from this alone.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::apf::ApfParams;
use crate::dphr::DphrParams;
use crate::dynamics::{PlantParams, YawPd};
use crate::error::{self, Error, Result};
use crate::localizer::LocalizerParams;
use crate::mission::MissionParams;
use crate::nmpc::{InputBounds, NmpcWeights, SolverSettings};
use crate::sim::{Artifact, DetectionModel, SensorRig, Solid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedProfile {
    #[default]
    Nominal,
    /// Raised position weight and the preset's shorter exploration budget.
    Fast,
}

/// Additions to the preset world.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldOverrides {
    pub extra_obstacles: Vec<Solid>,
    pub extra_artifacts: Vec<Artifact>,
    pub remove_artifacts: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    /// Keep the per-tick trace (always written when `dir` is set).
    pub trace: bool,
    /// Write every n-th LiDAR scan as plain xyz text.
    pub dump_scan_every: Option<usize>,
    /// Write every n-th heading-regulation frame as PGM.
    pub dump_depth_every: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    pub seed: u64,
    pub profile: SpeedProfile,
    /// Exploration budget; the preset's value for the profile when unset.
    pub t_reference: Option<f64>,
    /// Flight altitude; the preset's value when unset.
    pub altitude: Option<f64>,
    /// Position weight ceiling used by the fast profile.
    pub fast_q_p_max: f64,
    /// Initial heading relative to the preset's start heading, rad.
    pub start_yaw_offset: f64,
    /// Start displaced left of the preset's start point, m.
    pub start_lateral_offset: f64,
    /// Simulated time after which the run ends as TIMEOUT; derived from the
    /// exploration budget when unset.
    pub time_limit: Option<f64>,
    /// Simulated time at which STOP is commanded.
    pub stop_at: Option<f64>,
    pub overrides: WorldOverrides,
    pub output: OutputConfig,
    pub plant: PlantParams,
    pub weights: NmpcWeights,
    pub bounds: InputBounds,
    pub solver: SolverSettings,
    pub yaw: YawPd,
    pub apf: ApfParams,
    pub dphr: DphrParams,
    pub localizer: LocalizerParams,
    /// `t_reference` and `altitude` here are replaced by the resolved values.
    pub mission: MissionParams,
    pub sensors: SensorRig,
    pub detection: DetectionModel,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: "curving".into(),
            seed: 1,
            profile: SpeedProfile::Nominal,
            t_reference: None,
            altitude: None,
            fast_q_p_max: 1000.0,
            start_yaw_offset: 0.0,
            start_lateral_offset: 0.0,
            time_limit: None,
            stop_at: None,
            overrides: WorldOverrides::default(),
            output: OutputConfig::default(),
            plant: PlantParams::default(),
            weights: NmpcWeights::default(),
            bounds: InputBounds::default(),
            solver: SolverSettings::default(),
            yaw: YawPd::default(),
            apf: ApfParams::default(),
            dphr: DphrParams::default(),
            localizer: LocalizerParams::default(),
            mission: MissionParams::default(),
            sensors: SensorRig::default(),
            detection: DetectionModel::default(),
        }
    }
}

impl RunConfig {
    pub fn for_preset(preset: &str, seed: u64) -> Self {
        Self {
            preset: preset.into(),
            seed,
            ..Self::default()
        }
    }

    pub fn fast(mut self) -> Self {
        self.profile = SpeedProfile::Fast;
        self
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        crate::sim::preset(&self.preset)?;
        let finite = |x: Option<f64>| x.map_or(true, |v| v.is_finite() && v >= 0.0);
        if !(finite(self.t_reference) && finite(self.time_limit) && finite(self.stop_at)) {
            return Err(Error::Config("t_reference, time_limit and stop_at must be finite and >= 0".into()));
        }
        if let Some(a) = self.altitude {
            if !(a.is_finite() && a > 0.0) {
                return Err(Error::Config("altitude must be positive".into()));
            }
        }
        if !(self.fast_q_p_max.is_finite() && self.fast_q_p_max >= self.weights.q_p_min) {
            return Err(Error::Config("fast_q_p_max must be at least q_p_min".into()));
        }
        if !(self.start_yaw_offset.is_finite() && self.start_lateral_offset.is_finite()) {
            return Err(Error::Config("start offsets must be finite".into()));
        }
        if self.output.dump_scan_every == Some(0) || self.output.dump_depth_every == Some(0) {
            return Err(Error::Config("dump intervals must be at least 1".into()));
        }
        self.weights.validate()?;
        self.bounds.validate()?;
        self.apf.validate()?;
        self.dphr.validate()?;
        self.localizer.validate()?;
        self.sensors.validate()?;
        self.detection.validate()?;
        let s = &self.solver;
        if !(s.horizon >= 1 && s.dt > 0.0 && s.max_inner >= 1 && s.max_outer >= 1) {
            return Err(Error::Config("invalid solver settings".into()));
        }
        if !(self.yaw.kp >= 0.0 && self.yaw.kd >= 0.0 && self.yaw.max_rate > 0.0) {
            return Err(Error::Config("invalid yaw controller gains".into()));
        }
        for a in &self.overrides.extra_artifacts {
            if self.localizer.prior(a.class_id).is_none() {
                return Err(Error::UnknownClass(a.class_id));
            }
        }
        let mut m = self.mission;
        m.t_reference = self.t_reference.unwrap_or(0.0);
        m.altitude = self.altitude.unwrap_or(m.altitude);
        m.validate()
    }

    /// Weights with the profile's position ceiling.
    pub fn effective_weights(&self) -> NmpcWeights {
        let mut w = self.weights;
        if self.profile == SpeedProfile::Fast {
            w.q_p_max = self.fast_q_p_max;
        }
        w
    }
}
