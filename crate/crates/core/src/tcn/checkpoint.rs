//! Binary checkpoint container.
//!
//! Layout (all integers and floats little-endian):
//! magic `GDTCNCKP`, `u32` version, `u32` block count, per block five `u32`
//! (in, out, kernel, dilation, projection flag), `u64` parameter count, the
//! parameters as `f64`, the normalizer (6 min, 6 max as `f64`, 6 degenerate
//! flags as `u8`), and the training config as a length-prefixed TOML string.

use std::fs;
use std::path::Path;

use super::model::{BlockSpec, TcnModel};
use super::normalize::Normalizer;
use super::train::TrainConfig;
use super::N_FEATURES;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"GDTCNCKP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: TcnModel,
    pub train_config: TrainConfig,
}

pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let m = &ckpt.model;
    let mut b = Vec::with_capacity(16 + m.params.len() * 8 + 512);
    b.extend_from_slice(MAGIC);
    b.extend_from_slice(&VERSION.to_le_bytes());
    let blocks = m.blocks();
    b.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for s in &blocks {
        for v in [s.in_channels, s.out_channels, s.kernel, s.dilation, s.projection as usize] {
            b.extend_from_slice(&(v as u32).to_le_bytes());
        }
    }
    b.extend_from_slice(&(m.params.len() as u64).to_le_bytes());
    for p in &m.params {
        b.extend_from_slice(&p.to_le_bytes());
    }
    for v in m.normalizer.min.iter().chain(&m.normalizer.max) {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b.extend(m.normalizer.degenerate.iter().map(|&d| d as u8));
    let cfg = toml::to_string(&ckpt.train_config).map_err(|e| Error::Config(e.to_string()))?;
    b.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
    b.extend_from_slice(cfg.as_bytes());
    Ok(b)
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.data.len() - self.pos < n {
            return Err(format!("truncated at byte {}", self.pos));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(data: &[u8]) -> std::result::Result<Checkpoint, String> {
    let mut r = Reader { data, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err("not a checkpoint file (bad magic)".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let mut model = TcnModel::new();
    let expected = model.blocks();
    let n_blocks = r.u32()? as usize;
    let mut blocks = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let v: Vec<usize> = (0..5).map(|_| r.u32().map(|x| x as usize)).collect::<std::result::Result<_, _>>()?;
        blocks.push(BlockSpec {
            in_channels: v[0],
            out_channels: v[1],
            kernel: v[2],
            dilation: v[3],
            projection: v[4] != 0,
        });
    }
    if blocks != expected {
        return Err(format!("architecture mismatch: {blocks:?}"));
    }
    let n = r.u64()? as usize;
    if n != model.num_params() {
        return Err(format!("expected {} parameters, found {n}", model.num_params()));
    }
    for p in model.params.iter_mut() {
        *p = r.f64()?;
    }
    let mut norm = Normalizer::identity();
    for f in 0..N_FEATURES {
        norm.min[f] = r.f64()?;
    }
    for f in 0..N_FEATURES {
        norm.max[f] = r.f64()?;
    }
    for (f, &d) in r.take(N_FEATURES)?.iter().enumerate() {
        norm.degenerate[f] = d != 0;
    }
    model.normalizer = norm;
    let len = r.u64()? as usize;
    let text = std::str::from_utf8(r.take(len)?).map_err(|e| e.to_string())?;
    let train_config = toml::from_str(text).map_err(|e| e.to_string())?;
    if r.pos != data.len() {
        return Err(format!("{} trailing bytes", data.len() - r.pos));
    }
    Ok(Checkpoint { model, train_config })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, encode(ckpt)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&data).map_err(|msg| Error::format(path, msg))
}
