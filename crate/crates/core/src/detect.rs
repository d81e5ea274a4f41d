//! Gust detection on predicted blimp velocities.
//!
//! Only the first `t_max_g` seconds of a forecast are examined. Their
//! per-axis mean is removed and the span is cut into `W_g` windows; a gust
//! is flagged when the largest absolute deviation in any window and axis
//! strictly exceeds the threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::Vec3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionConfig {
    /// Number of windows.
    pub windows: usize,
    /// Deviation threshold [m/s].
    pub threshold: f64,
    /// Detection horizon [s].
    pub t_max_g: f64,
    /// Sample rate of the forecast [Hz].
    pub sample_rate: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            windows: 10,
            threshold: 0.9,
            t_max_g: 6.0,
            sample_rate: 10.0,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.windows == 0 || !(self.threshold > 0.0) || !(self.t_max_g > 0.0) || !(self.sample_rate > 0.0) {
            return Err(Error::Invalid(format!("invalid detection config {self:?}")));
        }
        Ok(())
    }

    /// Number of forecast samples eligible for detection.
    pub fn span(&self) -> usize {
        (self.t_max_g * self.sample_rate).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionResult {
    pub gust_detected: bool,
    /// `(window index, axis)` pairs above threshold.
    pub flagged_windows: Vec<(usize, usize)>,
    /// Time from the forecast start by which the gust effect is predicted to
    /// have subsided [s].
    pub subsided_after: Option<f64>,
    /// Per-window, per-axis maximum deviations.
    pub deviations: Vec<[f64; 3]>,
}

/// Splits `len` samples into `count` contiguous ranges; the remainder goes to
/// the last range.
pub fn windows(len: usize, count: usize) -> Result<Vec<std::ops::Range<usize>>> {
    if count == 0 || len < count {
        return Err(Error::Invalid(format!(
            "cannot split {len} samples into {count} windows"
        )));
    }
    let size = len / count;
    Ok((0..count)
        .map(|i| {
            let start = i * size;
            let end = if i + 1 == count { len } else { start + size };
            start..end
        })
        .collect())
}

pub fn detect(pred_velocities: &[Vec3], config: &DetectionConfig) -> Result<DetectionResult> {
    if pred_velocities.is_empty() {
        return Err(Error::Invalid("empty velocity forecast".into()));
    }
    let span = pred_velocities.len().min(config.span());
    let series = &pred_velocities[..span];
    let mean = series.iter().sum::<Vec3>() / span as f64;
    let ranges = windows(span, config.windows)?;

    let mut result = DetectionResult::default();
    let mut last_flagged_end = None;
    for (i, range) in ranges.iter().enumerate() {
        let mut dev = [0.0f64; 3];
        for v in &series[range.clone()] {
            for (axis, d) in dev.iter_mut().enumerate() {
                *d = d.max((v[axis] - mean[axis]).abs());
            }
        }
        for (axis, &d) in dev.iter().enumerate() {
            if d > config.threshold {
                result.flagged_windows.push((i, axis));
                last_flagged_end = Some(range.end);
            }
        }
        result.deviations.push(dev);
    }
    if let Some(end) = last_flagged_end {
        result.gust_detected = true;
        result.subsided_after = Some(end as f64 / config.sample_rate);
    }
    Ok(result)
}
