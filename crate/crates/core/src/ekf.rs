//! Docking-port bias estimation: a random-walk bias corrected by
//! intermittent marker observations, followed by a first-order low-pass.

use nalgebra::Matrix3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EkfParams {
    /// Marker noise standard deviation [m].
    pub sigma_m: f64,
    /// Per-tick probability of a missing marker detection.
    pub p_drop: f64,
    /// Random-walk intensity [m²/s].
    pub q_proc: f64,
    /// Measurement variance [m²].
    pub r_meas: f64,
    pub alpha: f64,
    /// Initial bias variance [m²].
    pub p0: f64,
}

impl Default for EkfParams {
    fn default() -> Self {
        Self {
            sigma_m: 0.03,
            p_drop: 0.3,
            q_proc: 1e-4,
            r_meas: 9e-4,
            alpha: 0.3,
            p0: 1.0,
        }
    }
}

impl EkfParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma_m >= 0.0
            && (0.0..=1.0).contains(&self.p_drop)
            && self.q_proc >= 0.0
            && self.r_meas > 0.0
            && self.alpha > 0.0
            && self.alpha <= 1.0
            && self.p0 >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("invalid estimator parameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasState {
    pub bias: Vec3,
    pub covariance: Matrix3<f64>,
}

impl BiasState {
    pub fn new(p0: f64) -> Self {
        Self {
            bias: Vec3::zeros(),
            covariance: Matrix3::identity() * p0,
        }
    }

    /// Random-walk propagation.
    pub fn predict(&self, dt: f64, q_proc: f64) -> Self {
        Self {
            bias: self.bias,
            covariance: self.covariance + Matrix3::identity() * (q_proc * dt.max(0.0)),
        }
    }

    /// Kalman update with identity observation and Joseph-form covariance.
    pub fn update(&self, obs: &MarkerObservation, shared_port: &Vec3, r_meas: f64) -> Self {
        if !obs.valid || !obs.measured_port_position.iter().all(|v| v.is_finite()) {
            return *self;
        }
        let innovation = (obs.measured_port_position - shared_port) - self.bias;
        let r = Matrix3::identity() * r_meas;
        let s = self.covariance + r;
        let Some(s_inv) = s.try_inverse() else {
            return *self;
        };
        let k = self.covariance * s_inv;
        let ikh = Matrix3::identity() - k;
        let p = ikh * self.covariance * ikh.transpose() + k * r * k.transpose();
        Self {
            bias: self.bias + k * innovation,
            covariance: (p + p.transpose()) * 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerObservation {
    pub measured_port_position: Vec3,
    pub time: f64,
    pub valid: bool,
}

impl MarkerObservation {
    /// True port plus Gaussian noise, dropped with probability `p_drop`.
    pub fn synthesize(true_port: &Vec3, time: f64, params: &EkfParams, rng: &mut impl Rng) -> Self {
        let dropped = rng.gen_bool(params.p_drop);
        let noise = Normal::new(0.0, params.sigma_m).expect("non-negative sigma");
        let n = Vec3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng));
        Self {
            measured_port_position: true_port + n,
            time,
            valid: !dropped,
        }
    }
}

/// First-order low-pass on the corrected port position.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LowPass {
    pub output: Option<Vec3>,
}

impl LowPass {
    pub fn step(&mut self, raw: &Vec3, alpha: f64) -> Vec3 {
        let out = match self.output {
            None => *raw,
            Some(prev) => raw * alpha + prev * (1.0 - alpha),
        };
        self.output = Some(out);
        out
    }
}

/// Bias estimator plus output filter, stepped once per control tick.
#[derive(Debug, Clone)]
pub struct PortEstimator {
    pub params: EkfParams,
    pub state: BiasState,
    pub lowpass: LowPass,
}

impl PortEstimator {
    pub fn new(params: EkfParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            state: BiasState::new(params.p0),
            lowpass: LowPass::default(),
        })
    }

    /// Predicts over `dt`, fuses `obs` and returns the filtered port estimate.
    pub fn step(&mut self, dt: f64, obs: &MarkerObservation, shared_port: &Vec3) -> Vec3 {
        self.state = self.state.predict(dt, self.params.q_proc).update(obs, shared_port, self.params.r_meas);
        let raw = shared_port + self.state.bias;
        self.lowpass.step(&raw, self.params.alpha)
    }

    /// Unfiltered corrected port position.
    pub fn corrected(&self, shared_port: &Vec3) -> Vec3 {
        shared_port + self.state.bias
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obs(p: Vec3) -> MarkerObservation {
        MarkerObservation {
            measured_port_position: p,
            time: 0.0,
            valid: true,
        }
    }

    fn is_psd(m: &Matrix3<f64>) -> bool {
        (m - m.transpose()).norm() < 1e-12 && m.symmetric_eigenvalues().iter().all(|&e| e >= -1e-12)
    }

    #[test]
    fn predict_grows_covariance() {
        let s = BiasState::new(0.5);
        assert_eq!(s.predict(1.0, 0.0), s);
        let p = s.predict(1.0, 0.01);
        for i in 0..3 {
            assert!((p.covariance[(i, i)] - 0.51).abs() < 1e-15);
        }
        assert!(is_psd(&p.covariance));
    }

    #[test]
    fn converges_to_constant_offset() {
        let delta = Vec3::new(0.4, -0.2, 0.7);
        let shared = Vec3::new(10.0, 5.0, 25.0);
        // scalar oracle: after n updates the error shrinks to r / (r + n·p0)
        for (r, tol) in [(9e-4, 1e-12), (1e-5, 1e-12)] {
            let mut s = BiasState::new(1.0);
            for _ in 0..50 {
                s = s.update(&obs(shared + delta), &shared, r);
            }
            let expected = delta * (1.0 - r / (r + 50.0));
            assert!((s.bias - expected).norm() < tol);
            if r < 1e-4 {
                assert!((s.bias - delta).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn degenerate_updates() {
        let shared = Vec3::new(1.0, 2.0, 3.0);
        let s = BiasState::new(1.0);
        let huge = s.update(&obs(shared + Vec3::x()), &shared, 1e15);
        assert!((huge.bias - s.bias).norm() < 1e-9);
        assert!((huge.covariance - s.covariance).norm() < 1e-9);
        let exact = BiasState { bias: Vec3::x(), ..s };
        let same = exact.update(&obs(shared + Vec3::x()), &shared, 9e-4);
        assert_eq!(same.bias, exact.bias);
        let invalid = MarkerObservation { valid: false, ..obs(shared) };
        assert_eq!(s.update(&invalid, &shared, 9e-4), s);
    }

    #[test]
    fn lowpass_behaviour() {
        let mut lp = LowPass::default();
        assert_eq!(lp.step(&Vec3::x(), 0.2), Vec3::x());
        let mut last = Vec3::zeros();
        for _ in 0..10 {
            last = lp.step(&Vec3::new(2.0, 0.0, 0.0), 0.2);
        }
        assert!((last.x - 1.0 - (1.0 - 0.8f64.powi(10))).abs() < 1e-12);
        let mut lp = LowPass::default();
        lp.step(&Vec3::zeros(), 1.0);
        assert_eq!(lp.step(&Vec3::y(), 1.0), Vec3::y());
    }

    #[test]
    fn synthetic_markers_drop_at_the_configured_rate() {
        let params = EkfParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 20_000;
        let obs: Vec<_> = (0..n)
            .map(|i| MarkerObservation::synthesize(&Vec3::zeros(), i as f64, &params, &mut rng))
            .collect();
        let drop = obs.iter().filter(|o| !o.valid).count() as f64 / n as f64;
        assert!((drop - 0.3).abs() < 0.015);
        let var = obs.iter().map(|o| o.measured_port_position.x.powi(2)).sum::<f64>() / n as f64;
        assert!((var.sqrt() - 0.03).abs() < 0.002);
    }

    #[test]
    fn estimator_tracks_noisy_offset() {
        let params = EkfParams::default();
        let mut est = PortEstimator::new(params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let offset = Vec3::new(0.5, -0.3, 0.2);
        let shared = Vec3::new(3.0, 4.0, 24.6);
        let mut out = Vec3::zeros();
        for i in 0..300 {
            let o = MarkerObservation::synthesize(&(shared + offset), i as f64 * 0.1, &params, &mut rng);
            out = est.step(0.1, &o, &shared);
        }
        assert!((out - shared - offset).norm() < 0.03);
        assert!(PortEstimator::new(EkfParams { alpha: 0.0, ..params }).is_err());
    }

    proptest! {
        #[test]
        fn update_properties(
            p0 in 0.01..2.0f64,
            r in 1e-4..1.0f64,
            b in prop::array::uniform3(-1.0..1.0f64),
            d in prop::array::uniform3(-1.0..1.0f64),
            shift in prop::array::uniform3(-100.0..100.0f64),
        ) {
            let s = BiasState { bias: Vec3::from(b), covariance: Matrix3::identity() * p0 };
            let shared = Vec3::new(1.0, 2.0, 3.0);
            let truth = Vec3::from(d);
            let u = s.update(&obs(shared + truth), &shared, r);
            prop_assert!(is_psd(&u.covariance));
            prop_assert!(u.covariance.trace() <= s.covariance.trace() + 1e-12);
            prop_assert!((u.bias - truth).norm() <= (s.bias - truth).norm() + 1e-12);
            let sh = Vec3::from(shift);
            let v = s.update(&obs(shared + truth + sh), &(shared + sh), r);
            prop_assert!((v.bias - u.bias).norm() < 1e-9);
        }
    }
}
