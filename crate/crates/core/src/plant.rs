//! Surrogate blimp and UAV plants and the gust-response dataset pipeline.
//!
//! The blimp's velocity deviation from its nominal straight-line velocity
//! follows an underdamped second-order response per axis, driven by the gust
//! velocity:
//!
//! ```text
//! ë + 2ζωₙ ė + ωₙ² e = k_g ωₙ² v_g
//! ```
//!
//! discretized exactly under a zero-order hold of the gust input. Attitude
//! is a clamped linear function of the deviation.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gust::{sample_direction_uniform, sample_directions_equidistant, GustEvent};
use crate::world::{wrap_angle, BlimpState, Euler, UavState, Vec3};

const EULER_LIMIT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlimpPlantParams {
    pub nominal_velocity: [f64; 3],
    /// Natural frequency of the gust-response mode [rad/s].
    pub omega_n: f64,
    pub zeta: f64,
    pub gust_gain: f64,
    /// Roll, pitch and yaw gains [rad·s/m] applied to (e_y, e_x, e_y).
    pub euler_gain: [f64; 3],
    pub dt: f64,
    pub initial_position: [f64; 3],
}

impl Default for BlimpPlantParams {
    fn default() -> Self {
        Self {
            nominal_velocity: [1.0, 0.0, 0.0],
            omega_n: 0.4,
            zeta: 0.3,
            gust_gain: 1.6,
            euler_gain: [0.05, 0.05, 0.08],
            dt: 0.1,
            initial_position: [0.0, 0.0, 30.0],
        }
    }
}

impl BlimpPlantParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega_n > 0.0) {
            return Err(Error::Invalid(format!("omega_n must be > 0, got {}", self.omega_n)));
        }
        if !(self.zeta > 0.0 && self.zeta < 1.0) {
            return Err(Error::Invalid(format!(
                "zeta must lie in (0, 1), got {}",
                self.zeta
            )));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Invalid(format!("dt must be > 0, got {}", self.dt)));
        }
        Ok(())
    }

    pub fn nominal(&self) -> Vec3 {
        Vec3::from(self.nominal_velocity)
    }

    pub fn initial(&self) -> Vec3 {
        Vec3::from(self.initial_position)
    }

    fn heading(&self) -> f64 {
        let v = self.nominal();
        if v.x == 0.0 && v.y == 0.0 {
            0.0
        } else {
            v.y.atan2(v.x)
        }
    }

    /// Exact zero-order-hold discretization `(Φ, Γ)` of the per-axis mode.
    fn discretization(&self) -> ([[f64; 2]; 2], [f64; 2]) {
        let w = self.omega_n;
        let sigma = self.zeta * w;
        let wd = w * (1.0 - self.zeta * self.zeta).sqrt();
        let decay = (-sigma * self.dt).exp();
        let (s, c) = (wd * self.dt).sin_cos();
        let phi = [
            [decay * (c + sigma / wd * s), decay * s / wd],
            [-decay * w * w / wd * s, decay * (c - sigma / wd * s)],
        ];
        // Γ = (I − Φ)·[k_g, 0]ᵀ since the steady state of a unit input is (k_g, 0).
        let gamma = [
            (1.0 - phi[0][0]) * self.gust_gain,
            -phi[1][0] * self.gust_gain,
        ];
        (phi, gamma)
    }

    pub fn attitude(&self, deviation: &Vec3) -> Euler {
        let clamp = |a: f64| a.clamp(-EULER_LIMIT, EULER_LIMIT);
        Euler::new(
            clamp(self.euler_gain[0] * deviation.y),
            clamp(self.euler_gain[1] * deviation.x),
            wrap_angle(self.heading() + clamp(self.euler_gain[2] * deviation.y)),
        )
    }
}

/// Per-axis oscillator state: velocity deviation and its rate.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Oscillator {
    pub deviation: Vec3,
    pub rate: Vec3,
}

impl Oscillator {
    /// Lyapunov energy `ωₙ² e² + ė²` summed over axes.
    pub fn energy(&self, params: &BlimpPlantParams) -> f64 {
        let w2 = params.omega_n * params.omega_n;
        w2 * self.deviation.norm_squared() + self.rate.norm_squared()
    }
}

/// One blimp step of length `params.dt` with the gust held constant.
pub fn step_blimp(
    state: &BlimpState,
    osc: &Oscillator,
    gust: &Vec3,
    params: &BlimpPlantParams,
) -> (BlimpState, Oscillator) {
    let (phi, gamma) = params.discretization();
    let mut next = Oscillator::default();
    for axis in 0..3 {
        let e = osc.deviation[axis];
        let r = osc.rate[axis];
        let u = gust[axis];
        next.deviation[axis] = phi[0][0] * e + phi[0][1] * r + gamma[0] * u;
        next.rate[axis] = phi[1][0] * e + phi[1][1] * r + gamma[1] * u;
    }
    let velocity = params.nominal() + next.deviation;
    let position = state.position + 0.5 * params.dt * (state.velocity + velocity);
    let blimp = BlimpState::new(
        position,
        velocity,
        params.attitude(&next.deviation),
        state.time + params.dt,
    );
    (blimp, next)
}

/// Exact double-integrator step with velocity clamping.
pub fn step_uav(state: &UavState, accel: &Vec3, dt: f64, v_min: &Vec3, v_max: &Vec3) -> UavState {
    let position = state.position + dt * state.velocity + 0.5 * dt * dt * accel;
    let v = state.velocity + dt * accel;
    let velocity = Vec3::new(
        v.x.clamp(v_min.x, v_max.x),
        v.y.clamp(v_min.y, v_max.y),
        v.z.clamp(v_min.z, v_max.z),
    );
    UavState::new(position, velocity, state.time + dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    /// Pre-gust period; also the gust onset time [s].
    pub t0: f64,
    pub gust_duration: f64,
    /// End of the recording [s].
    pub t2: f64,
    pub v_max: f64,
    pub direction: Vec3,
    pub seed: u64,
}

impl EpisodeSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.t0 && self.t0 + self.gust_duration < self.t2 && self.gust_duration > 0.0) {
            return Err(Error::Invalid(format!(
                "episode timing must satisfy 0 < t0 < t0 + T_g < t2: {self:?}"
            )));
        }
        self.gust().validate().map_err(Error::Invalid)
    }

    pub fn gust(&self) -> GustEvent {
        GustEvent::new(self.t0, self.gust_duration, self.v_max, self.direction)
    }

    pub fn samples(&self, dt: f64) -> usize {
        (self.t2 / dt).round() as usize + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub spec: EpisodeSpec,
    pub blimp_trace: Vec<BlimpState>,
    pub gust_trace: Vec<Vec3>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.blimp_trace.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blimp_trace.is_empty()
    }

    pub fn velocities(&self) -> Vec<Vec3> {
        self.blimp_trace.iter().map(|b| b.velocity).collect()
    }
}

pub fn simulate_episode(spec: &EpisodeSpec, params: &BlimpPlantParams) -> Result<Episode> {
    spec.validate()?;
    params.validate()?;
    let n = spec.samples(params.dt);
    let gust = spec.gust();
    let mut blimp = BlimpState::new(
        params.initial(),
        params.nominal(),
        params.attitude(&Vec3::zeros()),
        0.0,
    );
    let mut osc = Oscillator::default();
    let mut blimp_trace = Vec::with_capacity(n);
    let mut gust_trace = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 * params.dt;
        blimp.time = t;
        let g = gust.velocity(t);
        blimp_trace.push(blimp);
        gust_trace.push(g);
        if k + 1 < n {
            let (next, next_osc) = step_blimp(&blimp, &osc, &g, params);
            blimp = next;
            osc = next_osc;
        }
    }
    Ok(Episode {
        spec: *spec,
        blimp_trace,
        gust_trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Training,
    Evaluation,
    /// Gust-free episodes used for false-positive checks.
    Calm,
}

impl DatasetKind {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetKind::Training => "training",
            DatasetKind::Evaluation => "evaluation",
            DatasetKind::Calm => "calm",
        }
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "training" => Ok(DatasetKind::Training),
            "evaluation" => Ok(DatasetKind::Evaluation),
            "calm" => Ok(DatasetKind::Calm),
            other => Err(Error::Invalid(format!("unknown dataset kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetParams {
    /// Training gust peak speeds and the number of episodes per level.
    pub training_levels: Vec<(f64, usize)>,
    pub training_t0: f64,
    pub training_duration: f64,
    pub training_t2: f64,
    pub evaluation_count: usize,
    pub evaluation_v_max: f64,
    pub evaluation_t2: f64,
    pub calm_count: usize,
}

impl Default for DatasetParams {
    fn default() -> Self {
        Self {
            training_levels: vec![(1.0, 60), (2.0, 20), (3.0, 10), (4.0, 60)],
            training_t0: 10.0,
            training_duration: 4.0,
            training_t2: 46.0,
            evaluation_count: 10,
            evaluation_v_max: 4.0,
            evaluation_t2: 196.0,
            calm_count: 20,
        }
    }
}

/// Episode specifications of a dataset kind. Seeds are derived from `seed`.
pub fn dataset_specs(kind: DatasetKind, params: &DatasetParams, seed: u64) -> Vec<EpisodeSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        DatasetKind::Training => params
            .training_levels
            .iter()
            .flat_map(|&(v_max, count)| std::iter::repeat(v_max).take(count))
            .collect::<Vec<_>>()
            .into_iter()
            .map(|v_max| EpisodeSpec {
                t0: params.training_t0,
                gust_duration: params.training_duration,
                t2: params.training_t2,
                v_max,
                direction: sample_direction_uniform(&mut rng),
                seed: rng.gen(),
            })
            .collect(),
        DatasetKind::Evaluation => sample_directions_equidistant(params.evaluation_count)
            .into_iter()
            .map(|direction| EpisodeSpec {
                t0: params.training_t0,
                gust_duration: params.training_duration,
                t2: params.evaluation_t2,
                v_max: params.evaluation_v_max,
                direction,
                seed: rng.gen(),
            })
            .collect(),
        DatasetKind::Calm => (0..params.calm_count)
            .map(|_| EpisodeSpec {
                t0: params.training_t0,
                gust_duration: params.training_duration,
                t2: params.evaluation_t2,
                v_max: 0.0,
                direction: sample_direction_uniform(&mut rng),
                seed: rng.gen(),
            })
            .collect(),
    }
}

pub fn generate_dataset(
    kind: DatasetKind,
    params: &DatasetParams,
    plant: &BlimpPlantParams,
    seed: u64,
) -> Result<Vec<Episode>> {
    dataset_specs(kind, params, seed)
        .iter()
        .map(|spec| simulate_episode(spec, plant))
        .collect()
}

const TRACE_COLUMNS: [&str; 10] = [
    "t", "vx", "vy", "vz", "roll", "pitch", "yaw", "gx", "gy", "gz",
];

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

/// Writes one episode: `# key = value` header lines, then CSV rows.
pub fn write_episode(path: &Path, episode: &Episode, plant: &BlimpPlantParams) -> Result<()> {
    let s = &episode.spec;
    let p0 = episode
        .blimp_trace
        .first()
        .map(|b| b.position)
        .unwrap_or_else(|| plant.initial());
    let mut out = String::new();
    out.push_str("# format = gustdock-episode-1\n");
    out.push_str(&format!("# t0 = {}\n", s.t0));
    out.push_str(&format!("# gust_duration = {}\n", s.gust_duration));
    out.push_str(&format!("# t2 = {}\n", s.t2));
    out.push_str(&format!("# v_max = {}\n", s.v_max));
    out.push_str(&format!(
        "# direction = {} {} {}\n",
        s.direction.x, s.direction.y, s.direction.z
    ));
    out.push_str(&format!("# seed = {}\n", s.seed));
    out.push_str(&format!("# dt = {}\n", plant.dt));
    out.push_str(&format!("# initial_position = {} {} {}\n", p0.x, p0.y, p0.z));
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(TRACE_COLUMNS)?;
    for (b, g) in episode.blimp_trace.iter().zip(&episode.gust_trace) {
        let row = [
            b.time,
            b.velocity.x,
            b.velocity.y,
            b.velocity.z,
            b.euler.roll,
            b.euler.pitch,
            b.euler.yaw,
            g.x,
            g.y,
            g.z,
        ];
        wtr.write_record(row.iter().map(|v| v.to_string()))?;
    }
    let body = wtr
        .into_inner()
        .map_err(|e| Error::Invalid(format!("csv buffer: {e}")))?;
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(out.as_bytes()).map_err(io_err(path))?;
    file.write_all(&body).map_err(io_err(path))?;
    Ok(())
}

fn parse_header(path: &Path, text: &str) -> Result<(EpisodeSpec, f64, Vec3)> {
    let mut kv = std::collections::HashMap::new();
    for line in text.lines() {
        let Some(rest) = line.strip_prefix('#') else {
            break;
        };
        if let Some((k, v)) = rest.split_once('=') {
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let get = |key: &str| -> Result<&String> {
        kv.get(key)
            .ok_or_else(|| Error::format(path, format!("missing header key `{key}`")))
    };
    let num = |key: &str| -> Result<f64> {
        get(key)?
            .parse::<f64>()
            .map_err(|e| Error::format(path, format!("bad `{key}`: {e}")))
    };
    let vec3 = |key: &str| -> Result<Vec3> {
        let parts: Vec<f64> = get(key)?
            .split_whitespace()
            .map(|p| p.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(path, format!("bad `{key}`: {e}")))?;
        if parts.len() != 3 {
            return Err(Error::format(path, format!("`{key}` needs 3 components")));
        }
        Ok(Vec3::new(parts[0], parts[1], parts[2]))
    };
    let spec = EpisodeSpec {
        t0: num("t0")?,
        gust_duration: num("gust_duration")?,
        t2: num("t2")?,
        v_max: num("v_max")?,
        direction: vec3("direction")?,
        seed: get("seed")?
            .parse()
            .map_err(|e| Error::format(path, format!("bad `seed`: {e}")))?,
    };
    Ok((spec, num("dt")?, vec3("initial_position")?))
}

/// Reads an episode file; positions are rebuilt by trapezoidal integration,
/// which reproduces the plant's own integration bit for bit.
pub fn read_episode(path: &Path) -> Result<Episode> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let (spec, dt, p0) = parse_header(path, &text)?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut blimp_trace: Vec<BlimpState> = Vec::new();
    let mut gust_trace = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != TRACE_COLUMNS.len() {
            return Err(Error::format(path, format!("row has {} fields", rec.len())));
        }
        let v: Vec<f64> = rec
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(path, format!("bad number: {e}")))?;
        let velocity = Vec3::new(v[1], v[2], v[3]);
        let position = match blimp_trace.last() {
            None => p0,
            Some(prev) => prev.position + 0.5 * dt * (prev.velocity + velocity),
        };
        blimp_trace.push(BlimpState::new(
            position,
            velocity,
            Euler::new(v[4], v[5], v[6]),
            v[0],
        ));
        gust_trace.push(Vec3::new(v[7], v[8], v[9]));
    }
    Ok(Episode {
        spec,
        blimp_trace,
        gust_trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub kind: String,
    pub v_max: f64,
    pub seed: u64,
    pub t0: f64,
    pub gust_duration: f64,
    pub t2: f64,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
}

pub const MANIFEST: &str = "manifest.csv";

/// Persists episodes as `<kind>_<index>.csv` plus a manifest.
pub fn write_dataset(
    dir: &Path,
    kind: DatasetKind,
    episodes: &[Episode],
    plant: &BlimpPlantParams,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut paths = Vec::with_capacity(episodes.len());
    let manifest_path = dir.join(MANIFEST);
    let mut wtr = csv::Writer::from_path(&manifest_path)?;
    for (i, ep) in episodes.iter().enumerate() {
        let file = format!("{}_{:04}.csv", kind.name(), i);
        let path = dir.join(&file);
        write_episode(&path, ep, plant)?;
        let s = &ep.spec;
        wtr.serialize(ManifestEntry {
            file,
            kind: kind.name().to_string(),
            v_max: s.v_max,
            seed: s.seed,
            t0: s.t0,
            gust_duration: s.gust_duration,
            t2: s.t2,
            dx: s.direction.x,
            dy: s.direction.y,
            dz: s.direction.z,
        })?;
        paths.push(path);
    }
    wtr.flush().map_err(io_err(&manifest_path))?;
    Ok(paths)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Err(Error::Invalid(format!(
            "no dataset manifest at {}",
            path.display()
        )));
    }
    let mut rdr = csv::Reader::from_path(&path)?;
    rdr.deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

pub fn read_dataset(dir: &Path) -> Result<Vec<Episode>> {
    read_manifest(dir)?
        .iter()
        .map(|entry| read_episode(&dir.join(&entry.file)))
        .collect()
}
