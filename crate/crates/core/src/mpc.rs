//! Trajectory-planning MPC over a double-integrator UAV model with a fixed
//! external force input.
//!
//! The decision vector stacks states `x_0..x_N` (position, velocity) and
//! inputs `u_0..u_{N−1}` (free acceleration `a`, pinned force `f`).

use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qp::{CscMatrix, QProblem, QSolution, QStatus, QpSettings, QpSolver, WarmStart};
use crate::world::{BlimpState, UavState, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcParams {
    pub dt: f64,
    pub horizon: usize,
    pub a_min: [f64; 3],
    pub a_max: [f64; 3],
    pub v_min: [f64; 3],
    pub v_max: [f64; 3],
    pub q: [f64; 6],
    pub q_n: [f64; 6],
    pub r: [f64; 6],
    pub alpha_qn: f64,
    /// Weight of `p*_6` in the corridor target (the rest goes to `p*_7`).
    pub corridor_weight: f64,
    /// Gain of the hull-mode step length.
    pub hull_gain: f64,
}

impl Default for MpcParams {
    fn default() -> Self {
        Self {
            dt: 0.1,
            horizon: 15,
            a_min: [-5.0; 3],
            a_max: [5.0; 3],
            v_min: [-8.0, -8.0, -4.0],
            v_max: [8.0, 8.0, 4.0],
            q: [0.0; 6],
            q_n: [100.0, 100.0, 100.0, 10.0, 10.0, 10.0],
            r: [1.0, 1.0, 1.0, 0.0, 0.0, 0.0],
            alpha_qn: 0.002,
            corridor_weight: 0.5,
            hull_gain: 6.5,
        }
    }
}

impl MpcParams {
    pub fn validate(&self) -> Result<()> {
        let bounds_ok = (0..3).all(|i| self.a_min[i] < self.a_max[i] && self.v_min[i] < self.v_max[i]);
        let weights_ok = self.q.iter().chain(&self.q_n).chain(&self.r).all(|&w| w >= 0.0 && w.is_finite());
        if !(self.dt > 0.0)
            || self.horizon < 2
            || !bounds_ok
            || !weights_ok
            || !(self.alpha_qn > 0.0)
            || !(0.0..=1.0).contains(&self.corridor_weight)
            || !(self.hull_gain > 0.0)
        {
            return Err(Error::Invalid(format!("invalid MPC parameters {self:?}")));
        }
        Ok(())
    }

    /// `(Q, Q_N)` diagonals for a weight mode.
    pub fn weights(&self, mode: WeightMode) -> ([f64; 6], [f64; 6]) {
        match mode {
            WeightMode::Full => (self.q, self.q_n),
            WeightMode::Reduced => (self.q.map(|w| w * self.alpha_qn), self.q_n.map(|w| w * self.alpha_qn)),
        }
    }

    /// Horizontal speed limit used to cap the hull-mode step.
    pub fn v_max_xy(&self) -> f64 {
        self.v_max[0].abs().max(self.v_max[1].abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    #[default]
    Full,
    Reduced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Corridor,
    Hull,
    Free,
}

impl Region {
    pub fn name(&self) -> &'static str {
        match self {
            Region::Corridor => "corridor",
            Region::Hull => "hull",
            Region::Free => "free",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MpcState {
    pub p: Vec3,
    pub v: Vec3,
}

impl MpcState {
    pub fn new(p: Vec3, v: Vec3) -> Self {
        Self { p, v }
    }

    pub fn from_uav(uav: &UavState) -> Self {
        Self::new(uav.position, uav.velocity)
    }

    pub fn stacked(&self) -> Vector6<f64> {
        Vector6::new(self.p.x, self.p.y, self.p.z, self.v.x, self.v.y, self.v.z)
    }

    pub fn from_stacked(x: &[f64]) -> Self {
        Self::new(Vec3::new(x[0], x[1], x[2]), Vec3::new(x[3], x[4], x[5]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MpcInput {
    pub a: Vec3,
    pub f: Vec3,
}

impl MpcInput {
    pub fn stacked(&self) -> Vector6<f64> {
        Vector6::new(self.a.x, self.a.y, self.a.z, self.f.x, self.f.y, self.f.z)
    }
}

/// Reference states `z_0..z_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    pub z: Vec<MpcState>,
}

impl ReferenceTrajectory {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedTrajectory {
    pub x_star: Vec<MpcState>,
    pub u_star: Vec<MpcInput>,
    pub weight_mode: WeightMode,
}

pub fn system_matrices(dt: f64) -> (Matrix6<f64>, Matrix6<f64>) {
    let mut a = Matrix6::identity();
    let mut b = Matrix6::zeros();
    for i in 0..3 {
        a[(i, i + 3)] = dt;
        for col in [i, i + 3] {
            b[(i, col)] = 0.5 * dt * dt;
            b[(i + 3, col)] = dt;
        }
    }
    (a, b)
}

/// Integrates velocities into positions: composite Simpson at even indices,
/// one trapezoid step from the preceding even index at odd ones.
pub fn reference_from_velocity(v_pred: &[Vec3], p0: Vec3, dt: f64, horizon: usize) -> Result<ReferenceTrajectory> {
    if v_pred.len() < horizon + 1 {
        return Err(Error::Invalid(format!(
            "velocity series has {} samples, need {}",
            v_pred.len(),
            horizon + 1
        )));
    }
    if v_pred.iter().any(|v| !v.iter().all(|c| c.is_finite())) || !p0.iter().all(|c| c.is_finite()) {
        return Err(Error::Numeric("non-finite reference input".into()));
    }
    let mut p = vec![p0; horizon + 1];
    for k in 1..=horizon {
        p[k] = if k % 2 == 0 {
            p[k - 2] + (v_pred[k - 2] + v_pred[k - 1] * 4.0 + v_pred[k]) * (dt / 3.0)
        } else {
            p[k - 1] + (v_pred[k - 1] + v_pred[k]) * (dt / 2.0)
        };
    }
    Ok(ReferenceTrajectory {
        z: (0..=horizon).map(|k| MpcState::new(p[k], v_pred[k])).collect(),
    })
}

/// Reference from the blimp's current velocity held over the horizon.
pub fn constant_velocity_reference(blimp: &BlimpState, anchor: Vec3, horizon: usize, dt: f64) -> Result<ReferenceTrajectory> {
    reference_from_velocity(&vec![blimp.velocity; horizon + 1], anchor, dt, horizon)
}

fn var_x(k: usize, i: usize) -> usize {
    6 * k + i
}

fn var_u(horizon: usize, k: usize, i: usize) -> usize {
    6 * (horizon + 1) + 6 * k + i
}

/// Assembles the QP for one planning cycle.
pub fn build_problem(
    x0: &MpcState,
    reference: &ReferenceTrajectory,
    f_sequence: &[Vec3],
    params: &MpcParams,
    mode: WeightMode,
) -> Result<QProblem> {
    let n_h = params.horizon;
    if reference.len() != n_h + 1 {
        return Err(Error::Shape(format!("reference has {} states, need {}", reference.len(), n_h + 1)));
    }
    if f_sequence.len() != n_h {
        return Err(Error::Shape(format!("force sequence has {} entries, need {n_h}", f_sequence.len())));
    }
    let n = 6 * (n_h + 1) + 6 * n_h;
    let (q_w, qn_w) = params.weights(mode);

    let mut p_diag = vec![0.0; n];
    let mut q = vec![0.0; n];
    for k in 0..=n_h {
        let w = if k == n_h { &qn_w } else { &q_w };
        let z = reference.z[k].stacked();
        for i in 0..6 {
            p_diag[var_x(k, i)] = 2.0 * w[i];
            q[var_x(k, i)] = -2.0 * w[i] * z[i];
        }
    }
    for k in 0..n_h {
        for i in 0..6 {
            p_diag[var_u(n_h, k, i)] = 2.0 * params.r[i];
        }
    }
    let p = CscMatrix::from_diagonal(&p_diag);

    let (ad, bd) = system_matrices(params.dt);
    let mut t: Vec<(usize, usize, f64)> = Vec::new();
    let mut l = Vec::new();
    let mut u = Vec::new();
    let mut row = 0;
    // initial state
    let x0s = x0.stacked();
    for i in 0..6 {
        t.push((row, var_x(0, i), 1.0));
        l.push(x0s[i]);
        u.push(x0s[i]);
        row += 1;
    }
    // dynamics: x_{k+1} − A x_k − B u_k = 0
    for k in 0..n_h {
        for i in 0..6 {
            t.push((row, var_x(k + 1, i), 1.0));
            for j in 0..6 {
                if ad[(i, j)] != 0.0 {
                    t.push((row, var_x(k, j), -ad[(i, j)]));
                }
                if bd[(i, j)] != 0.0 {
                    t.push((row, var_u(n_h, k, j), -bd[(i, j)]));
                }
            }
            l.push(0.0);
            u.push(0.0);
            row += 1;
        }
    }
    for k in 1..=n_h {
        for i in 0..3 {
            t.push((row, var_x(k, 3 + i), 1.0));
            l.push(params.v_min[i]);
            u.push(params.v_max[i]);
            row += 1;
        }
    }
    for (k, f) in f_sequence.iter().enumerate() {
        for i in 0..3 {
            t.push((row, var_u(n_h, k, i), 1.0));
            l.push(params.a_min[i]);
            u.push(params.a_max[i]);
            row += 1;
            t.push((row, var_u(n_h, k, 3 + i), 1.0));
            l.push(f[i]);
            u.push(f[i]);
            row += 1;
        }
    }
    let a = CscMatrix::from_triplets(row, n, &t)?;
    Ok(QProblem { p, q, a, l, u })
}

fn unpack(x: &[f64], n_h: usize, f_sequence: &[Vec3], mode: WeightMode) -> PlannedTrajectory {
    let x_star = (0..=n_h).map(|k| MpcState::from_stacked(&x[var_x(k, 0)..var_x(k, 0) + 6])).collect();
    let u_star = (0..n_h)
        .map(|k| {
            let o = var_u(n_h, k, 0);
            MpcInput {
                a: Vec3::new(x[o], x[o + 1], x[o + 2]),
                // pinned; echo the input rather than the solver's copy
                f: f_sequence[k],
            }
        })
        .collect();
    PlannedTrajectory {
        x_star,
        u_star,
        weight_mode: mode,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub plan: PlannedTrajectory,
    pub status: QStatus,
    pub iterations: usize,
    /// True when the solver failed and the previous plan was reused.
    pub reused: bool,
}

/// Stateful planner: warm-starts the QP across ticks and falls back to the
/// previous plan when a solve fails.
#[derive(Debug, Clone)]
pub struct Mpc {
    pub params: MpcParams,
    solver: QpSolver,
    warm: Option<WarmStart>,
    last: Option<PlannedTrajectory>,
}

impl Mpc {
    pub fn new(params: MpcParams, qp: QpSettings) -> Result<Self> {
        params.validate()?;
        qp.validate()?;
        Ok(Self {
            params,
            solver: QpSolver::new(qp),
            warm: None,
            last: None,
        })
    }

    pub fn build_and_solve(
        &mut self,
        x0: &MpcState,
        reference: &ReferenceTrajectory,
        f_sequence: &[Vec3],
        mode: WeightMode,
    ) -> Result<PlanOutcome> {
        let problem = build_problem(x0, reference, f_sequence, &self.params, mode)?;
        let sol: QSolution = self.solver.solve(&problem, self.warm.as_ref())?;
        if sol.status == QStatus::Solved {
            self.warm = Some(WarmStart::from(&sol));
            let plan = unpack(&sol.x, self.params.horizon, f_sequence, mode);
            self.last = Some(plan.clone());
            return Ok(PlanOutcome {
                plan,
                status: sol.status,
                iterations: sol.iterations,
                reused: false,
            });
        }
        self.warm = None;
        log::warn!("MPC solve ended with {:?} after {} iterations", sol.status, sol.iterations);
        let plan = match &self.last {
            Some(p) => p.clone(),
            None => {
                return Err(Error::Numeric(format!(
                    "first MPC solve failed with status {:?}",
                    sol.status
                )))
            }
        };
        Ok(PlanOutcome {
            plan,
            status: sol.status,
            iterations: sol.iterations,
            reused: true,
        })
    }
}

/// `‖2·Q_N(x_N − z_N) + 2·R·u_{N−1}‖₂` with the weights of the plan's mode.
pub fn cost_gradient_norm(plan: &PlannedTrajectory, reference: &ReferenceTrajectory, params: &MpcParams) -> f64 {
    let (_, qn) = params.weights(plan.weight_mode);
    let n_h = plan.u_star.len();
    let e = plan.x_star[n_h].stacked() - reference.z[n_h].stacked();
    let u = plan.u_star[n_h - 1].stacked();
    let g = Vector6::from_fn(|i, _| 2.0 * qn[i] * e[i] + 2.0 * params.r[i] * u[i]);
    g.norm()
}

/// Waypoint handed to a position controller, by region.
pub fn extract_target(plan: &PlannedTrajectory, uav: &UavState, region: Region, params: &MpcParams) -> Result<Vec3> {
    let n_h = plan.x_star.len() - 1;
    if n_h < 7 {
        return Err(Error::Invalid(format!("horizon {n_h} too short for target extraction")));
    }
    let p0 = plan.x_star[0].p;
    let pn = plan.x_star[n_h].p;
    let delta = pn - p0;
    let len = delta.norm();
    if len < 1e-6 {
        return Ok(uav.position);
    }
    Ok(match region {
        Region::Corridor => plan.x_star[6].p * params.corridor_weight + plan.x_star[7].p * (1.0 - params.corridor_weight),
        Region::Hull => {
            let step = (params.hull_gain * len).min(params.v_max_xy() * params.dt * n_h as f64);
            uav.position + delta * (step / len)
        }
        Region::Free => pn,
    })
}
