use serde::{Deserialize, Serialize};

use super::N_FEATURES;
use crate::error::{Error, Result};

/// Per-feature min-max scaling to `[0, 1]`.
///
/// A feature with `max == min` is flagged degenerate and maps to 0.5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub min: [f64; N_FEATURES],
    pub max: [f64; N_FEATURES],
    pub degenerate: [bool; N_FEATURES],
}

impl Normalizer {
    pub fn identity() -> Self {
        Self {
            min: [0.0; N_FEATURES],
            max: [1.0; N_FEATURES],
            degenerate: [false; N_FEATURES],
        }
    }

    /// Fits on flattened `T × 6` data.
    pub fn fit<'a>(data: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut min = [f64::INFINITY; N_FEATURES];
        let mut max = [f64::NEG_INFINITY; N_FEATURES];
        let mut seen = false;
        for chunk in data {
            if chunk.len() % N_FEATURES != 0 {
                return Err(Error::Shape("frame data not a multiple of 6".into()));
            }
            for frame in chunk.chunks_exact(N_FEATURES) {
                for f in 0..N_FEATURES {
                    if !frame[f].is_finite() {
                        return Err(Error::Numeric("non-finite feature value".into()));
                    }
                    min[f] = min[f].min(frame[f]);
                    max[f] = max[f].max(frame[f]);
                }
                seen = true;
            }
        }
        if !seen {
            return Err(Error::Invalid("cannot fit normalizer on empty data".into()));
        }
        let mut degenerate = [false; N_FEATURES];
        for f in 0..N_FEATURES {
            degenerate[f] = max[f] <= min[f];
        }
        Ok(Self { min, max, degenerate })
    }

    #[inline]
    pub fn normalize_value(&self, f: usize, v: f64) -> f64 {
        if self.degenerate[f] {
            0.5
        } else {
            (v - self.min[f]) / (self.max[f] - self.min[f])
        }
    }

    #[inline]
    pub fn denormalize_value(&self, f: usize, v: f64) -> f64 {
        if self.degenerate[f] {
            self.min[f]
        } else {
            self.min[f] + v * (self.max[f] - self.min[f])
        }
    }

    pub fn normalize(&self, data: &[f64]) -> Vec<f64> {
        data.iter()
            .enumerate()
            .map(|(i, &v)| self.normalize_value(i % N_FEATURES, v))
            .collect()
    }

    pub fn denormalize(&self, data: &[f64]) -> Vec<f64> {
        data.iter()
            .enumerate()
            .map(|(i, &v)| self.denormalize_value(i % N_FEATURES, v))
            .collect()
    }
}

impl Default for Normalizer {
    fn default() -> Self {
        Self::identity()
    }
}
