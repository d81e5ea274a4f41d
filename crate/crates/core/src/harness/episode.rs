//! One closed-loop docking run against a replayed blimp trace.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::ceth::{in_corridor, Ceth, NoFlyZone, SafetySlider};
use crate::detect::detect;
use crate::ekf::{MarkerObservation, PortEstimator};
use crate::error::{Error, Result};
use crate::mpc::{
    cost_gradient_norm, extract_target, reference_from_velocity, Mpc, MpcState, PlannedTrajectory, Region, WeightMode,
};
use crate::plant::{step_uav, Episode};
use crate::world::{BlimpState, UavState, Vec3};

use super::config::Config;
use super::forecast::ForecastCache;
use super::scenario::{CethMode, GustPolicy, Scenario, VelocityModel};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeResult {
    pub success: bool,
    pub collision: bool,
    /// Time from engagement to docking [s].
    pub duration: Option<f64>,
    pub min_clearance: f64,
    pub ticks: usize,
    pub trace_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
struct TraceRow {
    t: f64,
    uav_px: f64,
    uav_py: f64,
    uav_pz: f64,
    uav_vx: f64,
    uav_vy: f64,
    uav_vz: f64,
    blimp_px: f64,
    blimp_py: f64,
    blimp_pz: f64,
    roll: f64,
    pitch: f64,
    yaw: f64,
    f_x: f64,
    f_y: f64,
    f_z: f64,
    region: &'static str,
    gust_flag: bool,
    target_x: f64,
    target_y: f64,
    target_z: f64,
    clearance: f64,
}

fn rotate_z(v: &Vec3, yaw: f64) -> Vec3 {
    let (s, c) = yaw.sin_cos();
    Vec3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z)
}

/// World position of the docking port of a posed zone.
pub fn port_position(blimp: &BlimpState, zone: &NoFlyZone) -> Vec3 {
    blimp.position + rotate_z(&zone.port_body(), blimp.euler.yaw)
}

/// Exact clearance to the posed zone; zero inside.
pub fn clearance(p: &Vec3, blimp: &BlimpState, zone: &NoFlyZone) -> (f64, bool) {
    let body = rotate_z(&(p - blimp.position), -blimp.euler.yaw);
    let s = zone.distance_and_normal(&body);
    (s.distance, s.inside_zone)
}

/// Positions reached by integrating `v` (trapezoid) from `p0`.
fn integrate(p0: Vec3, v: &[Vec3], dt: f64) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(v.len());
    let mut p = p0;
    out.push(p);
    for w in v.windows(2) {
        p += (w[0] + w[1]) * (dt / 2.0);
        out.push(p);
    }
    out
}

/// Everything a run needs besides the scenario and the trace.
pub struct EpisodeInputs<'a> {
    pub config: &'a Config,
    pub ceth: &'a Ceth,
    /// TCN forecasts of this episode; required for detection and TCN references.
    pub forecasts: Option<&'a ForecastCache>,
    /// Seed of the measurement noise of this run.
    pub noise_seed: u64,
    pub trace_path: Option<&'a Path>,
}

pub fn run_episode(scenario: &Scenario, episode: &Episode, inputs: &EpisodeInputs<'_>) -> Result<EpisodeResult> {
    let cfg = inputs.config;
    let needs_model = scenario.velocity_model == VelocityModel::Tcn || scenario.uses_detection();
    if needs_model && inputs.forecasts.is_none() {
        return Err(Error::Invalid(format!("scenario {scenario} needs a trained TCN")));
    }
    let n_h = cfg.mpc.horizon;
    if let Some(f) = inputs.forecasts {
        if f.per_tick.len() != episode.len() || f.steps < n_h.max(cfg.detection.span()) {
            return Err(Error::Invalid("forecast cache does not match the episode".into()));
        }
    }
    let dt = cfg.mpc.dt;
    let zone = &inputs.ceth.lut.zone;
    let corridor = inputs.ceth.corridor;
    let start = (cfg.run.start_offset / dt).round() as usize;
    if start >= episode.len() {
        return Err(Error::Invalid("start offset beyond the trace".into()));
    }
    let max_ticks = (cfg.run.timeout / dt).round() as usize;

    let mut ceth = inputs.ceth.clone();
    ceth.reset();
    let mut mpc = Mpc::new(cfg.mpc.clone(), cfg.qp.clone())?;
    let mut estimator = PortEstimator::new(cfg.ekf)?;
    let mut rng = ChaCha8Rng::seed_from_u64(inputs.noise_seed);
    let gps_noise = Normal::new(0.0, cfg.run.gps_noise).map_err(|e| Error::Config(e.to_string()))?;
    let gps_bias = Vec3::from(cfg.run.gps_bias);
    let body_port = zone.port_body();
    let a_min = Vec3::from(cfg.mpc.a_min);
    let a_max = Vec3::from(cfg.mpc.a_max);
    let v_min = Vec3::from(cfg.mpc.v_min);
    let v_max = Vec3::from(cfg.mpc.v_max);

    let mut writer = match inputs.trace_path {
        Some(p) => Some(csv::Writer::from_path(p).map_err(Error::from)?),
        None => None,
    };

    let mut uav = UavState::at_rest(Vec3::from(cfg.run.uav_start));
    uav.time = start as f64 * dt;
    let mut min_clearance = f64::INFINITY;
    let mut collision = false;
    let mut success = false;
    let mut duration = None;
    let mut clear_time = f64::NEG_INFINITY;
    let mut slider = SafetySlider::default();
    let mut last_plan: Option<(PlannedTrajectory, crate::mpc::ReferenceTrajectory)> = None;
    let mut ticks = 0;

    let mut k = start;
    while k + 1 < episode.len() && ticks < max_ticks {
        let t = k as f64 * dt;
        let blimp = episode.blimp_trace[k];
        let true_port = port_position(&blimp, zone);

        // (1) port estimate
        let noise = Vec3::new(gps_noise.sample(&mut rng), gps_noise.sample(&mut rng), gps_noise.sample(&mut rng));
        let shared = true_port + gps_bias + noise;
        let mut obs = MarkerObservation::synthesize(&true_port, t, &cfg.ekf, &mut rng);
        obs.valid &= (uav.position - true_port).norm() <= cfg.run.marker_range;
        let port_est = estimator.step(dt, &obs, &shared);
        let blimp_est = BlimpState {
            position: port_est - rotate_z(&body_port, blimp.euler.yaw),
            ..blimp
        };

        // (2) velocity prediction, current sample first
        let tcn = inputs.forecasts.map(|f| &f.per_tick[k]);
        let mut v_seq = Vec::with_capacity(n_h + 1);
        v_seq.push(blimp.velocity);
        match (scenario.velocity_model, tcn) {
            (VelocityModel::Tcn, Some(f)) => v_seq.extend_from_slice(&f[..n_h]),
            _ => v_seq.extend(std::iter::repeat(blimp.velocity).take(n_h)),
        }

        // (3) detection and (4) policy
        let mut subsided_index = 0;
        if scenario.uses_detection() {
            let f = tcn.expect("checked above");
            let span = cfg.detection.span();
            let mut series = Vec::with_capacity(span);
            series.push(blimp.velocity);
            series.extend_from_slice(&f[..span - 1]);
            let det = detect(&series, &cfg.detection)?;
            if let (true, Some(after)) = (det.gust_detected, det.subsided_after) {
                clear_time = clear_time.max(t + after);
            }
            subsided_index = ((clear_time - t).max(0.0) / dt).round() as usize;
        }
        let gust_active = scenario.uses_detection() && t < clear_time;
        let corridor_open = !(gust_active && scenario.gust_policy != GustPolicy::NoAbort);

        let dock_target = cfg.run.docking.docking_target(&port_est);
        let mut anchor = dock_target;
        if scenario.gust_policy == GustPolicy::SafetyPosition {
            // the slider follows the blimp trajectory of the scenario's own velocity model
            let f = tcn.expect("checked above");
            let mut v_full = Vec::with_capacity(f.len() + 1);
            v_full.push(blimp.velocity);
            match scenario.velocity_model {
                VelocityModel::Tcn => v_full.extend_from_slice(f),
                VelocityModel::Constant => v_full.extend(std::iter::repeat(blimp.velocity).take(f.len())),
            }
            let ports = integrate(port_est, &v_full, dt);
            if let Some(p) = slider.step(&ports, subsided_index, &corridor, gust_active)? {
                anchor = p;
            }
        }

        // (5) avoidance force
        let grad_norm = last_plan
            .as_ref()
            .map_or(0.0, |(plan, r)| cost_gradient_norm(plan, r, &cfg.mpc));
        let out = match scenario.ceth {
            CethMode::Active => ceth.force(&uav, &blimp_est, &port_est, corridor_open, grad_norm),
            CethMode::Inactive => crate::ceth::CethOutput {
                force: Vec3::zeros(),
                region: Region::Free,
                sample: None,
            },
        };

        // (6) plan, (7) waypoint
        let reference = reference_from_velocity(&v_seq, anchor, dt, n_h)?;
        let mode = if out.region == Region::Hull { WeightMode::Reduced } else { WeightMode::Full };
        let f_seq = vec![out.force; n_h];
        let outcome = mpc.build_and_solve(&MpcState::from_uav(&uav), &reference, &f_seq, mode)?;
        let waypoint = extract_target(&outcome.plan, &uav, out.region, &cfg.mpc)?;

        // (8) plant
        let a0 = outcome.plan.u_star[0].a + out.force;
        let accel = Vec3::new(
            a0.x.clamp(a_min.x, a_max.x),
            a0.y.clamp(a_min.y, a_max.y),
            a0.z.clamp(a_min.z, a_max.z),
        );
        uav = step_uav(&uav, &accel, dt, &v_min, &v_max);
        last_plan = Some((outcome.plan, reference));
        k += 1;
        ticks += 1;

        // (9) bookkeeping against the true blimp pose
        let next_blimp = episode.blimp_trace[k];
        let next_port = port_position(&next_blimp, zone);
        let (clear, inside) = clearance(&uav.position, &next_blimp, zone);
        min_clearance = min_clearance.min(clear);
        if inside && !(corridor_open && in_corridor(&uav.position, &corridor, &next_port)) {
            collision = true;
        }
        let docked = !collision && cfg.run.docking.is_docked(&uav, &next_port);
        if let Some(w) = writer.as_mut() {
            w.serialize(TraceRow {
                t: k as f64 * dt,
                uav_px: uav.position.x,
                uav_py: uav.position.y,
                uav_pz: uav.position.z,
                uav_vx: uav.velocity.x,
                uav_vy: uav.velocity.y,
                uav_vz: uav.velocity.z,
                blimp_px: next_blimp.position.x,
                blimp_py: next_blimp.position.y,
                blimp_pz: next_blimp.position.z,
                roll: next_blimp.euler.roll,
                pitch: next_blimp.euler.pitch,
                yaw: next_blimp.euler.yaw,
                f_x: out.force.x,
                f_y: out.force.y,
                f_z: out.force.z,
                region: out.region.name(),
                gust_flag: gust_active,
                target_x: waypoint.x,
                target_y: waypoint.y,
                target_z: waypoint.z,
                clearance: clear,
            })?;
        }
        if collision {
            break;
        }
        if docked {
            success = true;
            duration = Some(ticks as f64 * dt);
            break;
        }
    }
    if let Some(mut w) = writer {
        w.flush().map_err(|e| Error::io(inputs.trace_path.unwrap_or(Path::new("trace")), e))?;
    }
    Ok(EpisodeResult {
        success,
        collision,
        duration,
        min_clearance,
        ticks,
        trace_path: inputs.trace_path.map(Path::to_path_buf),
    })
}
