use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ceth::{ApproachCorridor, CethParams, NoFlyZone};
use crate::detect::DetectionConfig;
use crate::ekf::EkfParams;
use crate::error::{Error, Result};
use crate::mpc::MpcParams;
use crate::plant::{BlimpPlantParams, DatasetParams};
use crate::qp::QpSettings;
use crate::tcn::{ForecastConfig, TrainConfig};
use crate::world::DockingCriteria;

/// Closed-loop run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunParams {
    pub uav_start: [f64; 3],
    /// Episode time at which docking is engaged [s].
    pub start_offset: f64,
    pub timeout: f64,
    pub docking: DockingCriteria,
    /// GPS bias of the shared port estimate [m].
    pub gps_bias: [f64; 3],
    /// Per-axis noise of the shared port estimate [m].
    pub gps_noise: f64,
    /// Markers are only seen within this range of the port [m].
    pub marker_range: f64,
    /// Extra forecast steps beyond the MPC horizon used for detection.
    pub detection_steps: usize,
    /// Write one trace CSV per episode.
    pub write_traces: bool,
}

impl Default for RunParams {
    fn default() -> Self {
        Self {
            uav_start: [50.0, 50.0, 70.0],
            start_offset: 0.0,
            timeout: 200.0,
            docking: DockingCriteria::default(),
            gps_bias: [0.4, -0.3, 0.2],
            gps_noise: 0.05,
            marker_range: 20.0,
            detection_steps: 60,
            write_traces: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CethConfig {
    pub zone: NoFlyZone,
    pub corridor: ApproachCorridor,
    pub params: CethParams,
    /// LUT cell size [m].
    pub lut_cell: f64,
}

impl Default for CethConfig {
    fn default() -> Self {
        Self {
            zone: NoFlyZone::default(),
            corridor: ApproachCorridor::default(),
            params: CethParams::default(),
            lut_cell: 0.25,
        }
    }
}

/// Every tunable of the pipeline; defaults reproduce the reference setup.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub seed: u64,
    pub plant: BlimpPlantParams,
    pub dataset: DatasetParams,
    pub train: TrainConfig,
    pub forecast: ForecastConfig,
    pub detection: DetectionConfig,
    pub mpc: MpcParams,
    pub qp: QpSettings,
    pub ceth: CethConfig,
    pub ekf: EkfParams,
    pub run: RunParams,
}

impl Config {
    /// Loads a TOML file; `default` yields the built-in configuration.
    pub fn load(path: &Path) -> Result<Self> {
        if path.as_os_str() == "default" {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::from_toml(&text)?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        self.train.validate()?;
        self.detection.validate()?;
        self.mpc.validate()?;
        self.qp.validate()?;
        self.ceth.zone.validate()?;
        self.ceth.corridor.validate()?;
        self.ceth.params.validate()?;
        self.ekf.validate()?;
        self.run.docking.validate().map_err(Error::Config)?;
        if !(self.ceth.lut_cell > 0.0) {
            return Err(Error::Config(format!("lut_cell must be positive, got {}", self.ceth.lut_cell)));
        }
        if !(self.run.timeout > 0.0) || self.run.start_offset < 0.0 {
            return Err(Error::Config("timeout must be positive and start_offset non-negative".into()));
        }
        if (self.mpc.dt - self.plant.dt).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "controller period {} differs from the trace period {}",
                self.mpc.dt, self.plant.dt
            )));
        }
        if self.run.detection_steps < self.detection.span() {
            return Err(Error::Config(format!(
                "detection_steps {} shorter than the detection span {}",
                self.run.detection_steps,
                self.detection.span()
            )));
        }
        Ok(())
    }
}
