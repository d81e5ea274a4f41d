//! Corridor-enhanced tangential hull avoidance: no-fly-zone geometry, the
//! approach corridor, repulsive and tangential force fields, the distance
//! lookup table and the sliding safety position.

mod geometry;
mod lut;

pub use geometry::{HullSample, NoFlyZone};
pub use lut::{build_lut, GridSpec, HullLut};

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mpc::Region;
use crate::world::{BlimpState, UavState, Vec3};

/// Downward-opening truncated cone below the docking port.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApproachCorridor {
    pub r_cone: f64,
    pub h_cone: f64,
    /// Apex height above the port [m].
    pub o_tip: f64,
    pub h_cap: f64,
}

impl Default for ApproachCorridor {
    fn default() -> Self {
        Self {
            r_cone: 8.0,
            h_cone: 7.0,
            o_tip: 0.12,
            h_cap: 0.15,
        }
    }
}

impl ApproachCorridor {
    pub fn validate(&self) -> Result<()> {
        if self.r_cone > 0.0 && self.h_cap >= 0.0 && self.h_cap < self.h_cone && self.o_tip >= 0.0 {
            Ok(())
        } else {
            Err(Error::Invalid(format!("invalid approach corridor {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CethParams {
    pub k_rep: f64,
    pub k_tang: f64,
    pub d_band_tang: f64,
    pub d_band_rep: f64,
    pub d_min: f64,
    pub f_max_rep: f64,
    pub f_max_tang: f64,
    pub epsilon: f64,
}

impl Default for CethParams {
    fn default() -> Self {
        Self {
            k_rep: 1.0,
            k_tang: 10.0,
            d_band_tang: 5.0,
            d_band_rep: 5.5,
            d_min: 1.0,
            f_max_rep: 6.0,
            f_max_tang: 2.0,
            epsilon: 1e-6,
        }
    }
}

impl CethParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.k_rep,
            self.k_tang,
            self.d_band_tang,
            self.d_band_rep,
            self.d_min,
            self.f_max_rep,
            self.f_max_tang,
            self.epsilon,
        ]
        .iter()
        .all(|&v| v > 0.0 && v.is_finite());
        if positive && self.d_min < self.d_band_tang && self.d_band_tang < self.d_band_rep {
            Ok(())
        } else {
            Err(Error::Invalid(format!("invalid CETH parameters {self:?}")))
        }
    }
}

/// Whether a world point lies in the corridor hanging below `port`.
/// The cone axis is vertical, so the blimp's yaw does not matter.
pub fn in_corridor(p: &Vec3, corridor: &ApproachCorridor, port: &Vec3) -> bool {
    let depth = port.z + corridor.o_tip - p.z;
    let radial = (p.x - port.x).hypot(p.y - port.y);
    depth >= corridor.h_cap && depth <= corridor.h_cone && radial <= corridor.r_cone * depth / corridor.h_cone
}

/// Unclamped shaping potential `U(d)`; distances below `d_min` share the
/// value at the inner cutoff.
pub fn shaping(d: f64, params: &CethParams) -> f64 {
    let span = params.d_band_rep - params.d_min;
    if d >= params.d_band_rep {
        return 0.0;
    }
    let z = if d < params.d_min {
        FRAC_PI_2 * 0.1 / span
    } else {
        FRAC_PI_2 * (d - params.d_min) / span
    };
    FRAC_PI_2 / span * (1.0 / z.tan() + z - FRAC_PI_2)
}

pub fn repulsive_force(sample: &HullSample, params: &CethParams) -> Vec3 {
    let d = if sample.inside_zone { 0.0 } else { sample.distance };
    if d >= params.d_band_rep {
        return Vec3::zeros();
    }
    sample.normal * (params.k_rep * shaping(d, params)).min(params.f_max_rep)
}

/// Force along the zone's tangent plane toward the port. Returns the force
/// and the direction to remember as the next fallback.
pub fn tangential_force(
    uav: &Vec3,
    port: &Vec3,
    sample: &HullSample,
    grad_norm: f64,
    params: &CethParams,
    fallback: Option<Vec3>,
) -> (Vec3, Option<Vec3>) {
    if sample.distance > params.d_band_tang {
        return (Vec3::zeros(), fallback);
    }
    let v = port - uav;
    let n = sample.normal;
    let v_perp = v - n * v.dot(&n);
    let dir = if v_perp.norm() > params.epsilon {
        Some(v_perp.normalize())
    } else if fallback.is_some() {
        fallback
    } else if v.norm() > params.epsilon {
        Some(v.normalize())
    } else {
        None
    };
    match dir {
        Some(t) => {
            let mag = (params.k_tang * grad_norm.max(0.0)).min(params.f_max_tang);
            (t * mag, Some(t))
        }
        None => (Vec3::zeros(), fallback),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CethOutput {
    pub force: Vec3,
    pub region: Region,
    pub sample: Option<HullSample>,
}

/// Force-field evaluator holding the table and the tangential fallback state.
#[derive(Debug, Clone)]
pub struct Ceth {
    pub lut: HullLut,
    pub corridor: ApproachCorridor,
    pub params: CethParams,
    fallback: Option<Vec3>,
}

impl Ceth {
    pub fn new(lut: HullLut, corridor: ApproachCorridor, params: CethParams) -> Result<Self> {
        corridor.validate()?;
        params.validate()?;
        Ok(Self {
            lut,
            corridor,
            params,
            fallback: None,
        })
    }

    pub fn reset(&mut self) {
        self.fallback = None;
    }

    pub fn force(
        &mut self,
        uav: &UavState,
        blimp: &BlimpState,
        port: &Vec3,
        corridor_open: bool,
        grad_norm: f64,
    ) -> CethOutput {
        if corridor_open && in_corridor(&uav.position, &self.corridor, port) {
            return CethOutput {
                force: Vec3::zeros(),
                region: Region::Corridor,
                sample: None,
            };
        }
        let sample = self.lut.lookup(&uav.position, blimp);
        if !sample.inside_zone && sample.distance > self.params.d_band_rep {
            return CethOutput {
                force: Vec3::zeros(),
                region: Region::Free,
                sample: Some(sample),
            };
        }
        let rep = repulsive_force(&sample, &self.params);
        let (tang, fb) = tangential_force(&uav.position, port, &sample, grad_norm, &self.params, self.fallback);
        self.fallback = fb;
        CethOutput {
            force: rep + tang,
            region: Region::Hull,
            sample: Some(sample),
        }
    }
}

/// Sliding target along the predicted port trajectory while a gust is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SafetySlider {
    pub index: usize,
}

impl SafetySlider {
    /// Advances one index per call while `gust_active` and returns the
    /// waiting point below the corridor mouth. With no gust the slider resets
    /// and no target is returned.
    pub fn step(
        &mut self,
        predicted_ports: &[Vec3],
        subsided_index: usize,
        corridor: &ApproachCorridor,
        gust_active: bool,
    ) -> Result<Option<Vec3>> {
        if predicted_ports.is_empty() {
            return Err(Error::Invalid("empty port prediction".into()));
        }
        if !gust_active {
            self.index = 0;
            return Ok(None);
        }
        let cap = subsided_index.min(predicted_ports.len() - 1);
        self.index = (self.index + 1).min(cap);
        Ok(Some(predicted_ports[self.index] - Vec3::new(0.0, 0.0, corridor.h_cone + 1.0)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::Euler;
    use proptest::prelude::*;

    fn params() -> CethParams {
        CethParams::default()
    }

    fn outside(distance: f64, normal: Vec3) -> HullSample {
        HullSample {
            distance,
            closest_point: Vec3::zeros(),
            normal,
            inside_zone: false,
        }
    }

    /// Independent evaluation of the shaping function via cos/sin.
    fn u_oracle(d: f64) -> f64 {
        use std::f64::consts::PI;
        let (db, dm) = (5.5f64, 1.0f64);
        let z = if d < dm { PI / 2.0 * 0.1 / (db - dm) } else { PI / 2.0 * (d - dm) / (db - dm) };
        PI / (2.0 * (db - dm)) * (z.cos() / z.sin() + z - PI / 2.0)
    }

    #[test]
    fn corridor_membership() {
        let c = ApproachCorridor::default();
        let port = Vec3::new(1.0, 2.0, 30.0);
        let apex = port.z + c.o_tip;
        let on_axis = Vec3::new(1.0, 2.0, apex - (c.h_cap + c.h_cone) / 2.0);
        assert!(in_corridor(&on_axis, &c, &port));
        assert!(!in_corridor(&Vec3::new(1.0, 2.0, apex - 0.10), &c, &port));
        assert!(!in_corridor(&Vec3::new(9.01, 2.0, apex - 7.0), &c, &port));
        assert!(in_corridor(&Vec3::new(8.99, 2.0, apex - 7.0), &c, &port));
        assert!(!in_corridor(&Vec3::new(1.0, 2.0, apex - 7.01), &c, &port));
        assert!(c.validate().is_ok());
        assert!(ApproachCorridor { h_cap: 8.0, ..c }.validate().is_err());
    }

    #[test]
    fn shaping_values() {
        let p = params();
        assert_eq!(shaping(5.5, &p), 0.0);
        assert!(shaping(5.5 - 1e-9, &p).abs() < 1e-8);
        let u5 = shaping(5.0, &p);
        assert!((u5 - u_oracle(5.0)).abs() < 1e-12 && u5 > 0.0);
        assert!((shaping(0.5, &p) - 9.46).abs() < 0.01);
        let f = repulsive_force(&outside(0.5, Vec3::z()), &p);
        assert!((f - Vec3::new(0.0, 0.0, 6.0)).norm() < 1e-12);
        for d in [1.5, 2.0, 3.0, 4.2] {
            assert!((shaping(d, &p) - u_oracle(d)).abs() < 1e-12);
        }
    }

    #[test]
    fn repulsion_is_monotone_and_continuous_at_cutoff() {
        let p = params();
        let mut prev = f64::INFINITY;
        // U is singular at d_min itself
        let mut d = p.d_min + 1e-3;
        while d < p.d_band_rep {
            let u = shaping(d, &p);
            // strict until roundoff dominates next to the cutoff
            assert!(u < prev || u < 1e-9);
            prev = u;
            d += 1e-3;
        }
        let near = repulsive_force(&outside(p.d_band_rep - 1e-3, Vec3::x()), &p).norm();
        assert!(near < 1e-5);
        assert_eq!(repulsive_force(&outside(p.d_band_rep, Vec3::x()), &p).norm(), 0.0);
    }

    #[test]
    fn inside_zone_pushes_out_at_the_clamp() {
        let s = HullSample {
            distance: 0.0,
            closest_point: Vec3::zeros(),
            normal: Vec3::y(),
            inside_zone: true,
        };
        assert!((repulsive_force(&s, &params()) - Vec3::new(0.0, 6.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn tangential_cases() {
        let p = params();
        let s = outside(2.0, Vec3::z());
        let (f, t) = tangential_force(&Vec3::zeros(), &Vec3::new(1.0, 0.0, 1.0), &s, 0.05, &p, None);
        assert!((t.unwrap() - Vec3::x()).norm() < 1e-12);
        assert!((f - Vec3::new(0.5, 0.0, 0.0)).norm() < 1e-12);
        let (f, _) = tangential_force(&Vec3::zeros(), &Vec3::new(1.0, 0.0, 1.0), &s, 0.0, &p, None);
        assert_eq!(f.norm(), 0.0);
        let (f, _) = tangential_force(&Vec3::zeros(), &Vec3::new(1.0, 0.0, 1.0), &s, 5.0, &p, None);
        assert!((f.norm() - 2.0).abs() < 1e-12);
        // beyond the tangential band
        let (f, _) = tangential_force(&Vec3::zeros(), &Vec3::x(), &outside(5.2, Vec3::z()), 1.0, &p, None);
        assert_eq!(f.norm(), 0.0);
    }

    #[test]
    fn tangential_fallbacks() {
        let p = params();
        let s = outside(1.0, Vec3::z());
        // port straight along the normal: previous direction is reused
        let prev = Some(Vec3::y());
        let (f, t) = tangential_force(&Vec3::zeros(), &Vec3::new(0.0, 0.0, 3.0), &s, 1.0, &p, prev);
        assert_eq!(t, prev);
        assert!((f - Vec3::new(0.0, 2.0, 0.0)).norm() < 1e-12);
        let (_, t) = tangential_force(&Vec3::zeros(), &Vec3::new(0.0, 0.0, 3.0), &s, 1.0, &p, None);
        assert!((t.unwrap() - Vec3::z()).norm() < 1e-12);
        let (f, t) = tangential_force(&Vec3::zeros(), &Vec3::zeros(), &s, 1.0, &p, None);
        assert_eq!(f.norm(), 0.0);
        assert!(t.is_none());
    }

    fn ceth() -> Ceth {
        let zone = NoFlyZone::default();
        let lut = HullLut::for_zone(&zone, 0.5, 5.5).unwrap();
        Ceth::new(lut, ApproachCorridor::default(), params()).unwrap()
    }

    #[test]
    fn regions() {
        let mut c = ceth();
        let blimp = BlimpState::new(Vec3::new(0.0, 0.0, 30.0), Vec3::zeros(), Euler::default(), 0.0);
        let port = blimp.position + c.lut.zone.port_body();
        let below = UavState::at_rest(port - Vec3::new(0.0, 0.0, 1.0));
        let open = c.force(&below, &blimp, &port, true, 0.1);
        assert_eq!(open.region, Region::Corridor);
        assert_eq!(open.force.norm(), 0.0);
        let closed = c.force(&below, &blimp, &port, false, 0.1);
        assert_eq!(closed.region, Region::Hull);
        assert!(closed.force.norm() > 0.0);
        assert!(closed.force.z < 0.0);
        let far = UavState::at_rest(blimp.position + Vec3::new(0.0, 0.0, 14.0));
        let free = c.force(&far, &blimp, &port, false, 0.1);
        assert_eq!(free.region, Region::Free);
        assert_eq!(free.force.norm(), 0.0);
    }

    #[test]
    fn slider_advances_and_saturates() {
        let corridor = ApproachCorridor::default();
        let ports: Vec<Vec3> = (0..98).map(|i| Vec3::new(i as f64, 0.0, 30.0)).collect();
        let mut s = SafetySlider::default();
        let mut target = None;
        for _ in 0..30 {
            target = s.step(&ports, 50, &corridor, true).unwrap();
        }
        assert_eq!(s.index, 30);
        assert!((target.unwrap() - Vec3::new(30.0, 0.0, 22.0)).norm() < 1e-12);
        for _ in 0..50 {
            s.step(&ports, 50, &corridor, true).unwrap();
        }
        assert_eq!(s.index, 50);
        assert_eq!(s.step(&ports, 50, &corridor, false).unwrap(), None);
        assert_eq!(s.index, 0);
        assert!(s.step(&[], 50, &corridor, true).is_err());
    }

    proptest! {
        #[test]
        fn force_invariants(
            d in 0.0..8.0f64,
            n in prop::array::uniform3(-1.0..1.0f64),
            v in prop::array::uniform3(-10.0..10.0f64),
            g in 0.0..2.0f64,
        ) {
            let n = Vec3::from(n);
            prop_assume!(n.norm() > 1e-3);
            let n = n.normalize();
            let p = params();
            let s = outside(d, n);
            let rep = repulsive_force(&s, &p);
            prop_assert!(rep.norm() <= 6.0 + 1e-12);
            prop_assert!(rep.dot(&n) >= 0.0);
            let v = Vec3::from(v);
            let (t, _) = tangential_force(&Vec3::zeros(), &v, &s, g, &p, None);
            prop_assert!(t.norm() <= 2.0 + 1e-12);
            let v_perp = v - n * v.dot(&n);
            if v_perp.norm() > p.epsilon {
                prop_assert!(t.dot(&n).abs() <= 1e-9 * t.norm().max(1e-300));
            }
        }

        #[test]
        fn corridor_is_frame_covariant(
            q in prop::array::uniform3(-10.0..10.0f64),
            shift in prop::array::uniform3(-50.0..50.0f64),
        ) {
            let c = ApproachCorridor::default();
            let port = Vec3::new(0.0, 0.0, -5.4);
            let q = Vec3::from(q);
            let s = Vec3::from(shift);
            prop_assert_eq!(in_corridor(&q, &c, &port), in_corridor(&(q + s), &c, &(port + s)));
        }
    }
}
