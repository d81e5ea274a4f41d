//! Shared kinematic types and the docking-success predicate.
//!
//! The world frame is right-handed and z-up (ENU). Euler angles follow the
//! ZYX (yaw-pitch-roll) convention.

use serde::{Deserialize, Serialize};

/// 3-vector used for positions, velocities, accelerations and forces.
pub type Vec3 = nalgebra::Vector3<f64>;

/// Roll, pitch and yaw in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Euler {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl Euler {
    pub fn new(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self { roll, pitch, yaw }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.roll, self.pitch, self.yaw]
    }
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(angle: f64) -> f64 {
    use std::f64::consts::PI;
    let mut a = angle % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlimpState {
    /// Hull center.
    pub position: Vec3,
    pub velocity: Vec3,
    pub euler: Euler,
    pub time: f64,
}

impl BlimpState {
    pub fn new(position: Vec3, velocity: Vec3, euler: Euler, time: f64) -> Self {
        Self {
            position,
            velocity,
            euler,
            time,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UavState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub time: f64,
}

impl UavState {
    pub fn new(position: Vec3, velocity: Vec3, time: f64) -> Self {
        Self {
            position,
            velocity,
            time,
        }
    }

    pub fn at_rest(position: Vec3) -> Self {
        Self::new(position, Vec3::zeros(), 0.0)
    }
}

/// Tolerances of the docking-success check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DockingCriteria {
    /// Docking point distance below the port [m].
    pub below_offset: f64,
    /// Allowed horizontal error [m].
    pub lateral_tol: f64,
    /// Allowed vertical error [m].
    pub vertical_tol: f64,
}

impl Default for DockingCriteria {
    fn default() -> Self {
        Self {
            below_offset: 0.3,
            lateral_tol: 0.3,
            vertical_tol: 0.1,
        }
    }
}

impl DockingCriteria {
    pub fn validate(&self) -> Result<(), String> {
        if self.below_offset > 0.0 && self.lateral_tol > 0.0 && self.vertical_tol > 0.0 {
            Ok(())
        } else {
            Err(format!("docking tolerances must be positive: {self:?}"))
        }
    }

    /// Point the UAV has to reach for the given port position.
    pub fn docking_target(&self, port_position: &Vec3) -> Vec3 {
        port_position - Vec3::new(0.0, 0.0, self.below_offset)
    }

    /// Per-tick docking check against the port position.
    pub fn is_docked(&self, uav: &UavState, port_position: &Vec3) -> bool {
        let err = uav.position - self.docking_target(port_position);
        let lateral = err.x.hypot(err.y);
        lateral <= self.lateral_tol && err.z.abs() <= self.vertical_tol
    }
}

/// Docking target with the default 0.3 m offset.
pub fn docking_target(port_position: &Vec3) -> Vec3 {
    DockingCriteria::default().docking_target(port_position)
}

pub fn is_docked(uav: &UavState, port_position: &Vec3, crit: &DockingCriteria) -> bool {
    crit.is_docked(uav, port_position)
}
