//! Closed-loop evaluation: configuration, scenarios, episode runner,
//! scenario matrix and the rolling forecast error.

mod config;
mod episode;
mod forecast;
mod matrix;
mod scenario;

pub use config::{CethConfig, Config, RunParams};
pub use episode::{clearance, port_position, run_episode, EpisodeInputs, EpisodeResult};
pub use forecast::{forecast_at, history, rolling_mse, ForecastCache};
pub use matrix::{build_forecasts, run_matrix, DurationStats, MatrixReport, ScenarioRow};
pub use scenario::{CethMode, GustPolicy, Scenario, VelocityModel};

use crate::ceth::{ApproachCorridor, Ceth, HullLut};
use crate::error::Result;

/// CETH evaluator built from the configuration's zone and table settings.
pub fn build_ceth(config: &Config) -> Result<Ceth> {
    let c = &config.ceth;
    let lut = HullLut::for_zone(&c.zone, c.lut_cell, c.params.d_band_rep)?;
    Ceth::new(lut, c.corridor, c.params)
}

/// CETH evaluator around an existing table.
pub fn ceth_from_lut(config: &Config, lut: HullLut) -> Result<Ceth> {
    let corridor: ApproachCorridor = config.ceth.corridor;
    Ceth::new(lut, corridor, config.ceth.params)
}
