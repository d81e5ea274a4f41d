//! Precomputed nearest-cell table of the no-fly-zone distance field.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::geometry::{HullSample, NoFlyZone};
use crate::error::{Error, Result};
use crate::world::{BlimpState, Vec3};

const MAGIC: &[u8; 8] = b"GDHULLUT";
const VERSION: u32 = 1;
/// f32 values per cell: distance, closest point, normal, flags.
const RECORD: usize = 8;
const FLAG_INSIDE: f32 = 1.0;

/// Regular grid of cells; cell `(i, j, k)` spans
/// `origin + [i, i+1)·h × [j, j+1)·h × [k, k+1)·h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub origin: Vec3,
    pub cell: f64,
    pub dims: [usize; 3],
}

impl GridSpec {
    /// Smallest grid with cell size `cell` covering the zone inflated by `margin`.
    pub fn covering(zone: &NoFlyZone, cell: f64, margin: f64) -> Self {
        let (lo, hi) = zone.bounds();
        let origin = lo.add_scalar(-margin);
        let span = hi.add_scalar(margin) - origin;
        let dims = [0, 1, 2].map(|i| (span[i] / cell - 1e-9).ceil().max(1.0) as usize);
        Self { origin, cell, dims }
    }

    pub fn upper(&self) -> Vec3 {
        self.origin + Vec3::new(self.dims[0] as f64, self.dims[1] as f64, self.dims[2] as f64) * self.cell
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn center(&self, idx: [usize; 3]) -> Vec3 {
        self.origin + Vec3::new(idx[0] as f64 + 0.5, idx[1] as f64 + 0.5, idx[2] as f64 + 0.5) * self.cell
    }

    fn flat(&self, idx: [usize; 3]) -> usize {
        (idx[0] * self.dims[1] + idx[1]) * self.dims[2] + idx[2]
    }

    /// Cell containing a body-frame point, if inside the grid.
    pub fn cell_of(&self, p: &Vec3) -> Option<[usize; 3]> {
        let mut idx = [0; 3];
        for i in 0..3 {
            let f = ((p[i] - self.origin[i]) / self.cell).floor();
            if !(f >= 0.0 && f < self.dims[i] as f64) {
                return None;
            }
            idx[i] = f as usize;
        }
        Some(idx)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HullLut {
    pub zone: NoFlyZone,
    pub grid: GridSpec,
    /// Distance reported for queries outside the grid.
    pub far_distance: f64,
    data: Vec<f32>,
}

/// Builds the table, rejecting grids that do not cover the zone plus `band`.
pub fn build_lut(zone: &NoFlyZone, grid: GridSpec, band: f64) -> Result<HullLut> {
    zone.validate()?;
    if !(grid.cell > 0.0) || grid.is_empty() {
        return Err(Error::Invalid(format!("degenerate LUT grid {grid:?}")));
    }
    let (lo, hi) = zone.bounds();
    let need_lo = lo.add_scalar(-band);
    let need_hi = hi.add_scalar(band);
    let top = grid.upper();
    if (0..3).any(|i| grid.origin[i] > need_lo[i] || top[i] < need_hi[i]) {
        return Err(Error::Invalid(format!(
            "LUT grid [{:?}, {:?}] does not cover required extent [{:?}, {:?}]",
            grid.origin.as_slice(),
            top.as_slice(),
            need_lo.as_slice(),
            need_hi.as_slice()
        )));
    }

    let mut data = vec![0f32; grid.len() * RECORD];
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let plane = grid.dims[1] * grid.dims[2] * RECORD;
    let per_thread = grid.dims[0].div_ceil(threads).max(1);
    std::thread::scope(|s| {
        for (chunk_idx, chunk) in data.chunks_mut(per_thread * plane).enumerate() {
            s.spawn(move || {
                let i0 = chunk_idx * per_thread;
                for (di, slab) in chunk.chunks_mut(plane).enumerate() {
                    let i = i0 + di;
                    for j in 0..grid.dims[1] {
                        for k in 0..grid.dims[2] {
                            let sample = zone.distance_and_normal(&grid.center([i, j, k]));
                            let off = (j * grid.dims[2] + k) * RECORD;
                            write_record(&mut slab[off..off + RECORD], &sample);
                        }
                    }
                }
            });
        }
    });
    Ok(HullLut {
        zone: zone.clone(),
        grid,
        far_distance: band + 1.0,
        data,
    })
}

fn write_record(out: &mut [f32], s: &HullSample) {
    out[0] = s.distance as f32;
    for i in 0..3 {
        out[1 + i] = s.closest_point[i] as f32;
        out[4 + i] = s.normal[i] as f32;
    }
    out[7] = if s.inside_zone { FLAG_INSIDE } else { 0.0 };
}

fn rotate_z(v: &Vec3, yaw: f64) -> Vec3 {
    let (s, c) = yaw.sin_cos();
    Vec3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z)
}

impl HullLut {
    /// Default table: cell `cell`, zone inflated by `band + 2` metres.
    pub fn for_zone(zone: &NoFlyZone, cell: f64, band: f64) -> Result<Self> {
        build_lut(zone, GridSpec::covering(zone, cell, band + 2.0), band)
    }

    /// Stored sample of a cell, in the body frame.
    pub fn cell_sample(&self, idx: [usize; 3]) -> HullSample {
        let off = self.grid.flat(idx) * RECORD;
        let r = &self.data[off..off + RECORD];
        HullSample {
            distance: r[0] as f64,
            closest_point: Vec3::new(r[1] as f64, r[2] as f64, r[3] as f64),
            normal: Vec3::new(r[4] as f64, r[5] as f64, r[6] as f64),
            inside_zone: r[7] == FLAG_INSIDE,
        }
    }

    /// Nearest-cell sample for a body-frame point.
    pub fn lookup_body(&self, p: &Vec3) -> HullSample {
        match self.grid.cell_of(p) {
            Some(idx) => self.cell_sample(idx),
            None => {
                let normal = if p.norm() > 1e-12 { p.normalize() } else { Vec3::z() };
                HullSample {
                    distance: self.far_distance,
                    closest_point: p - normal * self.far_distance,
                    normal,
                    inside_zone: false,
                }
            }
        }
    }

    /// Sample for a world-frame point, with the zone posed by the blimp's
    /// position and yaw. Closest point and normal come back in the world frame.
    pub fn lookup(&self, p: &Vec3, blimp: &BlimpState) -> HullSample {
        let yaw = blimp.euler.yaw;
        let body = rotate_z(&(p - blimp.position), -yaw);
        let s = self.lookup_body(&body);
        HullSample {
            closest_point: rotate_z(&s.closest_point, yaw) + blimp.position,
            normal: rotate_z(&s.normal, yaw),
            ..s
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let z = &self.zone;
        let header = [
            z.hull_half_length,
            z.hull_radius,
            z.gondola_size[0],
            z.gondola_size[1],
            z.gondola_size[2],
            z.gondola_embed,
            self.grid.origin.x,
            self.grid.origin.y,
            self.grid.origin.z,
            self.grid.cell,
            self.far_distance,
        ];
        for v in header {
            w.write_all(&v.to_le_bytes())?;
        }
        for d in self.grid.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|msg| Error::format(path, msg))
    }

    fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut pos = 0;
        let mut take = |n: usize| -> std::result::Result<&[u8], String> {
            let s = bytes.get(pos..pos + n).ok_or("truncated LUT file")?;
            pos += n;
            Ok(s)
        };
        if take(8)? != MAGIC {
            return Err("not a LUT file".into());
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(format!("unsupported LUT version {version}"));
        }
        let mut h = [0f64; 11];
        for v in h.iter_mut() {
            *v = f64::from_le_bytes(take(8)?.try_into().unwrap());
        }
        let mut dims = [0usize; 3];
        for d in dims.iter_mut() {
            *d = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        }
        let zone = NoFlyZone {
            hull_half_length: h[0],
            hull_radius: h[1],
            gondola_size: [h[2], h[3], h[4]],
            gondola_embed: h[5],
        };
        let grid = GridSpec {
            origin: Vec3::new(h[6], h[7], h[8]),
            cell: h[9],
            dims,
        };
        let n = dims
            .iter()
            .try_fold(RECORD, |acc, &d| acc.checked_mul(d))
            .ok_or("LUT dimensions overflow")?;
        let raw = take(n.checked_mul(4).ok_or("LUT dimensions overflow")?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        if pos != bytes.len() {
            return Err("trailing bytes after LUT records".into());
        }
        Ok(Self {
            zone,
            grid,
            far_distance: h[10],
            data,
        })
    }
}
