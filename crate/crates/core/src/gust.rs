//! Discrete 1-cos wind gusts.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::world::Vec3;

/// One isolated gust event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GustEvent {
    /// Onset time [s].
    pub t1: f64,
    /// Duration [s].
    pub duration: f64,
    /// Peak speed [m/s].
    pub v_max: f64,
    /// Unit direction.
    pub direction: Vec3,
}

impl GustEvent {
    pub fn new(t1: f64, duration: f64, v_max: f64, direction: Vec3) -> Self {
        Self {
            t1,
            duration,
            v_max,
            direction,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.duration > 0.0) {
            return Err(format!("gust duration must be positive, got {}", self.duration));
        }
        if !(self.v_max >= 0.0) {
            return Err(format!("gust peak speed must be non-negative, got {}", self.v_max));
        }
        if (self.direction.norm() - 1.0).abs() > 1e-9 {
            return Err(format!(
                "gust direction must be a unit vector, norm is {}",
                self.direction.norm()
            ));
        }
        Ok(())
    }

    /// Scalar gust speed at time `t`; zero outside `[t1, t1 + duration]`.
    pub fn speed(&self, t: f64) -> f64 {
        if t < self.t1 || t > self.t1 + self.duration {
            return 0.0;
        }
        let phase = 2.0 * PI * (t - self.t1) / self.duration;
        0.5 * self.v_max * (1.0 - phase.cos())
    }

    pub fn velocity(&self, t: f64) -> Vec3 {
        self.speed(t) * self.direction
    }
}

pub fn gust_speed(event: &GustEvent, t: f64) -> f64 {
    event.speed(t)
}

pub fn gust_velocity(event: &GustEvent, t: f64) -> Vec3 {
    event.velocity(t)
}

/// Direction with components drawn from U[-1, 1], then normalized.
/// Near-zero draws are rejected and redrawn.
pub fn sample_direction_uniform<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.gen_range(-1.0..=1.0),
            rng.gen_range(-1.0..=1.0),
            rng.gen_range(-1.0..=1.0),
        );
        let n = v.norm();
        if n >= 1e-6 {
            return v / n;
        }
    }
}

/// `n` approximately equidistant unit vectors from a Fibonacci lattice.
pub fn sample_directions_equidistant(n: usize) -> Vec<Vec3> {
    let golden_angle = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let theta = golden_angle * i as f64;
            Vec3::new(r * theta.cos(), r * theta.sin(), z).normalize()
        })
        .collect()
}
