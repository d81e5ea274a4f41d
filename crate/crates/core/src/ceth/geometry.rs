use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::Vec3;

/// Blimp no-fly zone in the body frame: a capsule along body x unioned with a
/// gondola box hanging below the hull center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoFlyZone {
    /// Overall half-length of the capsule, caps included [m].
    pub hull_half_length: f64,
    pub hull_radius: f64,
    /// Gondola box size along body x, y, z [m].
    pub gondola_size: [f64; 3],
    /// How far the box top reaches into the hull [m].
    pub gondola_embed: f64,
}

impl Default for NoFlyZone {
    fn default() -> Self {
        Self {
            hull_half_length: 8.0,
            hull_radius: 4.0,
            gondola_size: [2.0, 1.0, 1.5],
            gondola_embed: 0.1,
        }
    }
}

/// Closest-surface query result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HullSample {
    pub distance: f64,
    pub closest_point: Vec3,
    pub normal: Vec3,
    pub inside_zone: bool,
}

struct Candidate {
    /// Distance outside, penetration depth inside.
    dist: f64,
    point: Vec3,
    normal: Vec3,
    inside: bool,
}

impl NoFlyZone {
    pub fn validate(&self) -> Result<()> {
        let ok = self.hull_radius > 0.0
            && self.hull_half_length >= self.hull_radius
            && self.gondola_size.iter().all(|&s| s > 0.0)
            && self.gondola_embed >= 0.0
            && self.gondola_embed < self.gondola_size[2]
            && self.gondola_size[0] / 2.0 < self.hull_half_length
            && self.gondola_size[1] / 2.0 < self.hull_radius;
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("invalid no-fly zone {self:?}")))
        }
    }

    /// Half-length of the capsule's axis segment.
    pub fn segment_half_length(&self) -> f64 {
        self.hull_half_length - self.hull_radius
    }

    /// `(min, max)` corners of the gondola box.
    pub fn gondola_bounds(&self) -> (Vec3, Vec3) {
        let [sx, sy, sz] = self.gondola_size;
        let top = -self.hull_radius + self.gondola_embed;
        (Vec3::new(-sx / 2.0, -sy / 2.0, top - sz), Vec3::new(sx / 2.0, sy / 2.0, top))
    }

    /// Docking port: bottom center of the gondola, on the zone boundary.
    pub fn port_body(&self) -> Vec3 {
        Vec3::new(0.0, 0.0, self.gondola_bounds().0.z)
    }

    /// Axis-aligned bounds of the whole zone.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let (bmin, _) = self.gondola_bounds();
        let r = self.hull_radius;
        (
            Vec3::new(-self.hull_half_length, -r, bmin.z.min(-r)),
            Vec3::new(self.hull_half_length, r, r),
        )
    }

    fn capsule(&self, p: &Vec3) -> Candidate {
        let h = self.segment_half_length();
        let c = Vec3::new(p.x.clamp(-h, h), 0.0, 0.0);
        let r = p - c;
        let len = r.norm();
        let normal = if len > 1e-12 {
            r / len
        } else if p.x.abs() > h {
            Vec3::new(p.x.signum(), 0.0, 0.0)
        } else {
            Vec3::z()
        };
        let point = c + normal * self.hull_radius;
        if len < self.hull_radius {
            Candidate { dist: self.hull_radius - len, point, normal, inside: true }
        } else {
            Candidate { dist: len - self.hull_radius, point, normal, inside: false }
        }
    }

    fn gondola(&self, p: &Vec3) -> Candidate {
        let (lo, hi) = self.gondola_bounds();
        let inside = (0..3).all(|i| p[i] > lo[i] && p[i] < hi[i]);
        if !inside {
            let q = Vec3::new(p.x.clamp(lo.x, hi.x), p.y.clamp(lo.y, hi.y), p.z.clamp(lo.z, hi.z));
            let r = p - q;
            let d = r.norm();
            let normal = if d > 1e-12 { r / d } else { face_normal(p, &lo, &hi).1 };
            return Candidate { dist: d, point: q, normal, inside: false };
        }
        let (depth, normal) = face_normal(p, &lo, &hi);
        Candidate { dist: depth, point: p + normal * depth, normal, inside: true }
    }

    fn contains_strictly(&self, p: &Vec3) -> bool {
        let c = self.capsule(p);
        let g = self.gondola(p);
        (c.inside && c.dist > 1e-9) || (g.inside && g.dist > 1e-9)
    }

    /// Straight exits through each gondola face whose footprint contains `p`.
    fn face_exits(&self, p: &Vec3, out: &mut Vec<Candidate>) {
        let (lo, hi) = self.gondola_bounds();
        for axis in 0..3 {
            let others = [(axis + 1) % 3, (axis + 2) % 3];
            if others.iter().any(|&o| p[o] <= lo[o] || p[o] >= hi[o]) {
                continue;
            }
            for (plane, sign) in [(lo[axis], -1.0), (hi[axis], 1.0)] {
                let depth = (plane - p[axis]) * sign;
                if depth < 0.0 {
                    continue;
                }
                let mut normal = Vec3::zeros();
                normal[axis] = sign;
                out.push(Candidate { dist: depth, point: p + normal * depth, normal, inside: true });
            }
        }
    }

    /// Distance, closest point and outward normal of the zone boundary.
    /// Inside the zone the normal points toward the nearest straight exit
    /// among the primitives' candidates that actually leaves the union.
    pub fn distance_and_normal(&self, p: &Vec3) -> HullSample {
        let c = self.capsule(p);
        let g = self.gondola(p);
        let best = if !c.inside && !g.inside {
            if c.dist <= g.dist {
                c
            } else {
                g
            }
        } else {
            let mut cands = Vec::with_capacity(7);
            if c.inside {
                cands.push(c);
            }
            self.face_exits(p, &mut cands);
            cands.sort_by(|a, b| a.dist.total_cmp(&b.dist));
            let pick = cands
                .iter()
                .position(|k| !self.contains_strictly(&(k.point + k.normal * 1e-6)))
                .unwrap_or(0);
            cands.swap_remove(pick)
        };
        HullSample {
            distance: if best.inside { 0.0 } else { best.dist },
            closest_point: best.point,
            normal: best.normal,
            inside_zone: best.inside,
        }
    }
}

/// Penetration depth and outward normal of the nearest box face.
fn face_normal(p: &Vec3, lo: &Vec3, hi: &Vec3) -> (f64, Vec3) {
    let mut best = (f64::INFINITY, Vec3::zeros());
    for i in 0..3 {
        let to_lo = p[i] - lo[i];
        let to_hi = hi[i] - p[i];
        if to_lo < best.0 {
            let mut n = Vec3::zeros();
            n[i] = -1.0;
            best = (to_lo, n);
        }
        if to_hi < best.0 {
            let mut n = Vec3::zeros();
            n[i] = 1.0;
            best = (to_hi, n);
        }
    }
    (best.0.max(0.0), best.1)
}
