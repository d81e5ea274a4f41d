//! Per-tick velocity forecasts over a replayed trace and the rolling MSE.

use crate::error::{Error, Result};
use crate::plant::Episode;
use crate::tcn::{predict_recursive, FeatureFrame, ForecastConfig, TcnModel, N_PRED};
use crate::world::Vec3;

use super::scenario::VelocityModel;

/// The 98-frame history ending at tick `i`; ticks before the trace start
/// repeat the first frame.
pub fn history(episode: &Episode, i: usize) -> Vec<FeatureFrame> {
    (0..N_PRED)
        .map(|k| {
            let idx = (i + k).saturating_sub(N_PRED - 1);
            FeatureFrame::from_blimp(&episode.blimp_trace[idx])
        })
        .collect()
}

/// Velocities for steps `1..=steps` after tick `i`.
pub fn forecast_at(
    model: Option<&TcnModel>,
    episode: &Episode,
    i: usize,
    steps: usize,
    cfg: &ForecastConfig,
) -> Result<Vec<Vec3>> {
    match model {
        None => Ok(vec![episode.blimp_trace[i].velocity; steps]),
        Some(m) => Ok(predict_recursive(m, &history(episode, i), steps, cfg)?
            .into_iter()
            .map(|f| f.v)
            .collect()),
    }
}

/// Forecasts for every tick of an episode, computed once and shared by all
/// scenarios replaying it.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastCache {
    pub steps: usize,
    pub per_tick: Vec<Vec<Vec3>>,
}

impl ForecastCache {
    pub fn build(model: &TcnModel, episode: &Episode, steps: usize, cfg: &ForecastConfig) -> Result<Self> {
        let per_tick = (0..episode.len())
            .map(|i| forecast_at(Some(model), episode, i, steps, cfg))
            .collect::<Result<_>>()?;
        Ok(Self { steps, per_tick })
    }
}

/// Per-axis rolling MSE over `episodes`, averaged across episodes.
///
/// For each window start the first forecast sample is the current
/// measurement, followed by `n − 1` predicted steps.
pub fn rolling_mse(
    model: VelocityModel,
    tcn: Option<&TcnModel>,
    episodes: &[Episode],
    n: usize,
    k: usize,
    cfg: &ForecastConfig,
) -> Result<[f64; 3]> {
    if episodes.is_empty() || n == 0 {
        return Err(Error::Invalid("rolling MSE needs episodes and a positive horizon".into()));
    }
    let tcn = match model {
        VelocityModel::Constant => None,
        VelocityModel::Tcn => Some(tcn.ok_or_else(|| Error::Invalid("TCN rolling MSE needs a model".into()))?),
    };
    let mut total = [0.0; 3];
    for ep in episodes {
        let v = ep.velocities();
        if v.len() <= n + k {
            return Err(Error::Invalid(format!(
                "trace of {} samples too short for N = {n}, K = {k}",
                v.len()
            )));
        }
        let w = v.len() - n - k;
        let mut err = [0.0; 3];
        for s in 0..w {
            let i = s + k - 1;
            let pred = if n > 1 { forecast_at(tcn, ep, i, n - 1, cfg)? } else { Vec::new() };
            for j in 0..n {
                let guess = if j == 0 { v[i] } else { pred[j - 1] };
                let e = guess - v[i + j];
                for a in 0..3 {
                    err[a] += e[a] * e[a];
                }
            }
        }
        for a in 0..3 {
            total[a] += err[a] / (w * n) as f64;
        }
    }
    Ok(total.map(|t| t / episodes.len() as f64))
}
