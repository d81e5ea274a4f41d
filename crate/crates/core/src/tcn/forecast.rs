use serde::{Deserialize, Serialize};

use super::model::TcnModel;
use super::{flatten, FeatureFrame, N_FEATURES, N_PRED};
use crate::error::{Error, Result};

/// How each forward pass extends the forecast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecastMode {
    /// Append only the newest output frame per pass. Consistent with the
    /// one-step-shifted training target. The fade-in shapes the returned
    /// frames only; the network is re-fed its raw predictions.
    #[default]
    Step,
    /// Append the whole 98-frame output per pass.
    Segment,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecastConfig {
    pub n_fade: usize,
    pub mode: ForecastMode,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            n_fade: 10,
            mode: ForecastMode::Step,
        }
    }
}

/// Raised-cosine fade-in weight; 0 with zero slope at `i = 0`, 1 from `n_fade` on.
pub fn fade_weight(i: usize, n_fade: usize) -> f64 {
    if i >= n_fade {
        1.0
    } else {
        (1.0 - (std::f64::consts::PI * i as f64 / n_fade as f64).cos()) / 2.0
    }
}

fn blend(anchor: &[f64; N_FEATURES], pred: &[f64], w: f64) -> [f64; N_FEATURES] {
    let mut out = [0.0; N_FEATURES];
    for f in 0..N_FEATURES {
        out[f] = (1.0 - w) * anchor[f] + w * pred[f];
    }
    out
}

/// Forecasts `horizon` frames following the 98-frame `seed`.
pub fn predict_recursive(
    model: &TcnModel,
    seed: &[FeatureFrame],
    horizon: usize,
    config: &ForecastConfig,
) -> Result<Vec<FeatureFrame>> {
    if horizon == 0 {
        return Err(Error::Invalid("forecast horizon must be at least 1".into()));
    }
    if seed.len() != N_PRED {
        return Err(Error::Shape(format!(
            "seed must have {N_PRED} frames, got {}",
            seed.len()
        )));
    }
    if let Some(bad) = seed.iter().position(|f| !f.is_finite()) {
        return Err(Error::Numeric(format!("non-finite seed frame {bad}")));
    }
    let norm = &model.normalizer;
    let mut window = norm.normalize(&flatten(seed));
    let mut out: Vec<[f64; N_FEATURES]> = Vec::with_capacity(horizon);

    match config.mode {
        ForecastMode::Step => {
            let anchor = seed[N_PRED - 1].to_array();
            while out.len() < horizon {
                let next = model.forward_last(&window)?;
                let raw = norm.denormalize(&next);
                // the anchor frame itself sits at fade index 0
                let f = blend(&anchor, &raw, fade_weight(out.len() + 1, config.n_fade));
                window.drain(..N_FEATURES);
                window.extend_from_slice(&next);
                out.push(f);
            }
        }
        ForecastMode::Segment => {
            let mut anchor = seed[N_PRED - 1].to_array();
            let mut history = window;
            while out.len() < horizon {
                let input = &history[history.len() - N_PRED * N_FEATURES..];
                let seg = norm.denormalize(&model.forward(input)?);
                for (i, frame) in seg.chunks_exact(N_FEATURES).enumerate() {
                    let f = blend(&anchor, frame, fade_weight(i, config.n_fade));
                    history.extend(norm.normalize(&f));
                    out.push(f);
                }
                anchor = out[out.len() - 1];
            }
        }
    }
    out.truncate(horizon);
    let frames: Vec<FeatureFrame> = out.iter().map(|a| FeatureFrame::from_array(a)).collect();
    if frames.iter().any(|f| !f.is_finite()) {
        return Err(Error::Numeric("forecast diverged to non-finite values".into()));
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tcn::Normalizer;
    use crate::world::{Euler, Vec3};

    fn seed(f: impl Fn(usize) -> [f64; 6]) -> Vec<FeatureFrame> {
        (0..N_PRED).map(|t| FeatureFrame::from_array(&f(t))).collect()
    }

    fn ramp_seed() -> Vec<FeatureFrame> {
        seed(|t| {
            let s = t as f64 * 0.1;
            [1.0 + 0.3 * s.sin(), 0.2 * s.cos(), 0.05, 0.01, -0.02, 0.1 * s.sin()]
        })
    }

    /// Zero conv weights; the last block's projection copies its input, so the
    /// model maps every frame to itself.
    fn identity_model() -> TcnModel {
        let mut m = TcnModel::new();
        m.params.fill(0.0);
        let layout = m.layout.clone();
        for l in &layout {
            let n = l.spec.out_channels;
            // layer-norm gain zero: the conv path contributes nothing
            m.params[l.ln_gain..l.ln_gain + n].fill(0.0);
            if let Some(sw) = l.skip_w {
                for o in 0..n.min(l.spec.in_channels) {
                    m.params[sw + o * l.spec.in_channels + o] = 1.0;
                }
            }
        }
        m
    }

    #[test]
    fn fade_weights() {
        assert_eq!(fade_weight(0, 10), 0.0);
        assert!((fade_weight(5, 10) - 0.5).abs() < 1e-15);
        assert_eq!(fade_weight(10, 10), 1.0);
        assert_eq!(fade_weight(40, 10), 1.0);
        // zero slope at the start: second difference dominates
        assert!(fade_weight(1, 10) < 0.1 / 4.0);
    }

    #[test]
    fn identity_model_holds_constant_seed() {
        let m = identity_model();
        let s = seed(|_| [1.0, -0.5, 0.2, 0.01, 0.02, 0.3]);
        for mode in [ForecastMode::Step, ForecastMode::Segment] {
            let cfg = ForecastConfig { mode, ..Default::default() };
            let out = predict_recursive(&m, &s, 250, &cfg).unwrap();
            assert_eq!(out.len(), 250);
            for f in &out {
                assert!((f.v - s[0].v).norm() < 1e-12);
                assert!((f.euler.yaw - 0.3).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_segment_matches_forward() {
        let mut m = TcnModel::new().init_he_normal(4);
        m.normalizer = Normalizer {
            min: [-1.0, -1.0, -1.0, -0.5, -0.5, -0.5],
            max: [3.0, 1.0, 1.0, 0.5, 0.5, 0.5],
            degenerate: [false; 6],
        };
        let s = ramp_seed();
        let cfg = ForecastConfig { mode: ForecastMode::Segment, ..Default::default() };
        let out = predict_recursive(&m, &s, N_PRED, &cfg).unwrap();
        let raw = m.normalizer.denormalize(&m.forward(&m.normalizer.normalize(&flatten(&s))).unwrap());
        let anchor = s[N_PRED - 1].to_array();
        for (i, f) in out.iter().enumerate() {
            let w = fade_weight(i, 10);
            let got = f.to_array();
            for k in 0..N_FEATURES {
                let expect = (1.0 - w) * anchor[k] + w * raw[i * N_FEATURES + k];
                assert!((got[k] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn step_mode_first_frame_matches_forward_tail() {
        let m = TcnModel::new().init_he_normal(8);
        let s = ramp_seed();
        let cfg = ForecastConfig { n_fade: 0, mode: ForecastMode::Step };
        let out = predict_recursive(&m, &s, 3, &cfg).unwrap();
        let full = m.forward(&flatten(&s)).unwrap();
        let last = &full[(N_PRED - 1) * N_FEATURES..];
        for k in 0..N_FEATURES {
            assert_eq!(out[0].to_array()[k], last[k]);
        }
    }

    #[test]
    fn fade_does_not_feed_back() {
        let m = TcnModel::new().init_he_normal(8);
        let s = ramp_seed();
        let faded = predict_recursive(&m, &s, 30, &ForecastConfig::default()).unwrap();
        let raw = predict_recursive(&m, &s, 30, &ForecastConfig { n_fade: 0, mode: ForecastMode::Step }).unwrap();
        let anchor = s[N_PRED - 1].to_array();
        for (i, (f, r)) in faded.iter().zip(&raw).enumerate() {
            let w = fade_weight(i + 1, 10);
            for k in 0..N_FEATURES {
                let expect = (1.0 - w) * anchor[k] + w * r.to_array()[k];
                assert!((f.to_array()[k] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn long_horizon_is_finite() {
        let m = TcnModel::new().init_he_normal(9);
        let out = predict_recursive(&m, &ramp_seed(), 1000, &ForecastConfig::default()).unwrap();
        assert_eq!(out.len(), 1000);
        assert!(out.iter().all(|f| f.is_finite()));
    }

    #[test]
    fn rejects_bad_arguments() {
        let m = identity_model();
        let cfg = ForecastConfig::default();
        assert!(predict_recursive(&m, &ramp_seed(), 0, &cfg).is_err());
        assert!(predict_recursive(&m, &ramp_seed()[1..], 5, &cfg).is_err());
        let mut s = ramp_seed();
        s[3] = FeatureFrame::new(Vec3::new(f64::NAN, 0.0, 0.0), Euler::default());
        assert!(predict_recursive(&m, &s, 5, &cfg).is_err());
    }
}
