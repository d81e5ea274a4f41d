//! Temporal convolutional predictor of the blimp's gust response.
//!
//! Four residual blocks of causal dilated convolutions map a 98-frame window
//! of blimp velocity and attitude to the same window shifted one step ahead.
//! Longer horizons come from recursive forecasting.

pub mod checkpoint;
mod forecast;
mod model;
mod normalize;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use forecast::{fade_weight, predict_recursive, ForecastConfig, ForecastMode};
pub use model::{BlockSpec, ForwardCache, TcnModel, ARCHITECTURE, IDENTITY_LN_BIAS, LN_EPS};
pub use normalize::Normalizer;
pub use train::{
    episode_frames, mse_loss, train, train_sequences, EpochRecord, LossCurve, LossWeighting,
    ModelInit, TrainConfig, TrainOutcome, WindowSet,
};

use serde::{Deserialize, Serialize};

use crate::world::{BlimpState, Euler, Vec3};

/// Frames per model input/output window.
pub const N_PRED: usize = 98;
/// Features per frame: velocity (3) and Euler angles (3).
pub const N_FEATURES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureFrame {
    pub v: Vec3,
    pub euler: Euler,
}

impl FeatureFrame {
    pub fn new(v: Vec3, euler: Euler) -> Self {
        Self { v, euler }
    }

    pub fn from_blimp(b: &BlimpState) -> Self {
        Self::new(b.velocity, b.euler)
    }

    pub fn to_array(&self) -> [f64; N_FEATURES] {
        [
            self.v.x,
            self.v.y,
            self.v.z,
            self.euler.roll,
            self.euler.pitch,
            self.euler.yaw,
        ]
    }

    pub fn from_array(a: &[f64]) -> Self {
        Self::new(Vec3::new(a[0], a[1], a[2]), Euler::new(a[3], a[4], a[5]))
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Flattens frames into a row-major `T × 6` buffer.
pub fn flatten(frames: &[FeatureFrame]) -> Vec<f64> {
    frames.iter().flat_map(|f| f.to_array()).collect()
}

pub fn unflatten(data: &[f64]) -> Vec<FeatureFrame> {
    data.chunks_exact(N_FEATURES)
        .map(FeatureFrame::from_array)
        .collect()
}
