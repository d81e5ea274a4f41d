//! Sparse convex QP solver: minimize ½xᵀPx + qᵀx subject to l ≤ Ax ≤ u.
//!
//! Operator splitting (ADMM) on the KKT system, factorized once per penalty
//! value, with adaptive penalty, over-relaxation, infeasibility detection,
//! warm starts and a final active-set polish.

pub mod csc;
pub mod ldl;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use csc::CscMatrix;
pub use ldl::LdlFactor;

use crate::error::{Error, Result};

/// Bounds at or beyond this magnitude are treated as infinite.
pub const INF_BOUND: f64 = 1e20;

#[derive(Debug, Clone, PartialEq)]
pub struct QProblem {
    /// Full symmetric cost matrix.
    pub p: CscMatrix,
    pub q: Vec<f64>,
    pub a: CscMatrix,
    pub l: Vec<f64>,
    pub u: Vec<f64>,
}

impl QProblem {
    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn m(&self) -> usize {
        self.l.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.n(), self.m());
        if self.p.nrows != n || self.p.ncols != n {
            return Err(Error::Shape(format!("P is {}×{}, expected {n}×{n}", self.p.nrows, self.p.ncols)));
        }
        if self.a.nrows != m || self.a.ncols != n || self.u.len() != m {
            return Err(Error::Shape(format!(
                "A is {}×{} with {} lower / {} upper bounds, expected {m}×{n}",
                self.a.nrows,
                self.a.ncols,
                m,
                self.u.len()
            )));
        }
        if self.p.asymmetry() > 1e-12 {
            return Err(Error::Invalid("P is not symmetric".into()));
        }
        let finite = self.q.iter().chain(&self.p.values).chain(&self.a.values).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Invalid("non-finite problem data".into()));
        }
        for i in 0..m {
            if self.l[i].is_nan() || self.u[i].is_nan() || self.l[i] > self.u[i] {
                return Err(Error::Invalid(format!("bounds of row {i} are inconsistent")));
            }
        }
        Ok(())
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let px = self.p.mul_vec(x);
        0.5 * dot(x, &px) + dot(&self.q, x)
    }

    /// Writes P (upper triangle), A, q, l and u in matrix-market-style
    /// coordinate sections.
    pub fn write_debug_dump(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        let section = |name: &str, m: &CscMatrix, s: &mut String| {
            let entries: Vec<_> = m.triplets().collect();
            let _ = writeln!(s, "%%MatrixMarket matrix coordinate real general");
            let _ = writeln!(s, "% {name}");
            let _ = writeln!(s, "{} {} {}", m.nrows, m.ncols, entries.len());
            for (r, c, v) in entries {
                let _ = writeln!(s, "{} {} {:e}", r + 1, c + 1, v);
            }
        };
        section("P (upper)", &self.p.upper(), &mut s);
        section("A", &self.a, &mut s);
        for (name, v) in [("q", &self.q), ("l", &self.l), ("u", &self.u)] {
            let _ = writeln!(s, "%%MatrixMarket matrix array real general");
            let _ = writeln!(s, "% {name}");
            let _ = writeln!(s, "{} 1", v.len());
            for x in v {
                let _ = writeln!(s, "{x:e}");
            }
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QpSettings {
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub eps_prim_inf: f64,
    pub max_iter: usize,
    pub adaptive_rho: bool,
    /// Iterations between penalty updates.
    pub adaptive_rho_interval: usize,
    /// Minimum change factor that triggers refactorization.
    pub adaptive_rho_tolerance: f64,
    /// Penalty multiplier on equality rows.
    pub eq_rho_scale: f64,
    pub polish: bool,
    pub polish_delta: f64,
    pub polish_refine_iter: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            eps_abs: 1e-5,
            eps_rel: 1e-5,
            eps_prim_inf: 1e-4,
            max_iter: 4000,
            adaptive_rho: true,
            adaptive_rho_interval: 25,
            adaptive_rho_tolerance: 10.0,
            eq_rho_scale: 1e3,
            polish: true,
            polish_delta: 1e-6,
            polish_refine_iter: 3,
        }
    }
}

impl QpSettings {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rho > 0.0
            && self.sigma > 0.0
            && self.alpha > 0.0
            && self.alpha < 2.0
            && self.eps_abs >= 0.0
            && self.eps_rel >= 0.0
            && self.eps_abs + self.eps_rel > 0.0
            && self.max_iter > 0
            && self.adaptive_rho_interval > 0
            && self.adaptive_rho_tolerance > 1.0
            && self.eq_rho_scale > 0.0
            && self.polish_delta > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("invalid QP settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QStatus {
    Solved,
    MaxIter,
    PrimalInfeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QSolution {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub status: QStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Penalty in effect at termination.
    pub rho: f64,
    pub polished: bool,
}

/// Iterate to resume from.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub rho: f64,
}

impl From<&QSolution> for WarmStart {
    fn from(s: &QSolution) -> Self {
        Self {
            x: s.x.clone(),
            y: s.y.clone(),
            z: s.z.clone(),
            rho: s.rho,
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn is_inf(v: f64) -> bool {
    v.abs() >= INF_BOUND
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum RowKind {
    Free,
    Inequality,
    Equality,
}

#[derive(Debug, Clone)]
struct CachedFactor {
    p: CscMatrix,
    a: CscMatrix,
    rho: Vec<f64>,
    factor: LdlFactor,
}

/// Reusable solver; keeps the last KKT factorization so repeated solves with
/// the same matrices and penalty skip refactoring.
#[derive(Debug, Clone, Default)]
pub struct QpSolver {
    pub settings: QpSettings,
    cache: Option<CachedFactor>,
    factorizations: usize,
}

/// One-shot cold-start solve.
pub fn solve(problem: &QProblem, settings: &QpSettings) -> Result<QSolution> {
    QpSolver::new(settings.clone()).solve(problem, None)
}

impl QpSolver {
    pub fn new(settings: QpSettings) -> Self {
        Self {
            settings,
            cache: None,
            factorizations: 0,
        }
    }

    /// Total KKT factorizations performed by this solver.
    pub fn factorizations(&self) -> usize {
        self.factorizations
    }

    fn row_kinds(problem: &QProblem) -> Vec<RowKind> {
        (0..problem.m())
            .map(|i| {
                let (l, u) = (problem.l[i], problem.u[i]);
                if is_inf(l) && is_inf(u) {
                    RowKind::Free
                } else if (u - l).abs() < 1e-12 * (1.0 + l.abs()) {
                    RowKind::Equality
                } else {
                    RowKind::Inequality
                }
            })
            .collect()
    }

    fn rho_vec(&self, rho: f64, kinds: &[RowKind]) -> Vec<f64> {
        kinds
            .iter()
            .map(|k| match k {
                RowKind::Free => 1e-6,
                RowKind::Inequality => rho,
                RowKind::Equality => rho * self.settings.eq_rho_scale,
            })
            .collect()
    }

    fn factor(&mut self, problem: &QProblem, rho: &[f64]) -> Result<LdlFactor> {
        if let Some(c) = &self.cache {
            if c.rho == rho && c.p == problem.p && c.a == problem.a {
                return Ok(c.factor.clone());
            }
        }
        let n = problem.n();
        let m = problem.m();
        let mut t: Vec<(usize, usize, f64)> = problem.p.triplets().filter(|&(r, c, _)| r <= c).collect();
        t.extend((0..n).map(|i| (i, i, self.settings.sigma)));
        t.extend(problem.a.triplets().map(|(r, c, v)| (c, n + r, v)));
        t.extend((0..m).map(|i| (n + i, n + i, -1.0 / rho[i])));
        let k = CscMatrix::from_triplets(n + m, n + m, &t)?;
        let factor = LdlFactor::new(&k)?;
        self.factorizations += 1;
        self.cache = Some(CachedFactor {
            p: problem.p.clone(),
            a: problem.a.clone(),
            rho: rho.to_vec(),
            factor: factor.clone(),
        });
        Ok(factor)
    }

    pub fn solve(&mut self, problem: &QProblem, warm: Option<&WarmStart>) -> Result<QSolution> {
        problem.validate()?;
        self.settings.validate()?;
        let s = self.settings.clone();
        let (n, m) = (problem.n(), problem.m());
        let kinds = Self::row_kinds(problem);

        let warm = warm.filter(|w| {
            let ok = w.x.len() == n && w.y.len() == m && w.z.len() == m;
            if !ok {
                log::warn!("warm start dimensions do not match the problem; starting cold");
            }
            ok
        });
        let (mut x, mut y, mut z, mut rho_scalar) = match warm {
            Some(w) => (w.x.clone(), w.y.clone(), w.z.clone(), w.rho),
            None => (vec![0.0; n], vec![0.0; m], vec![0.0; m], s.rho),
        };
        let mut rho = self.rho_vec(rho_scalar, &kinds);
        let mut factor = self.factor(problem, &rho)?;

        let mut rhs = vec![0.0; n + m];
        let mut status = QStatus::MaxIter;
        let mut iterations = 0;
        let mut prim_res = f64::INFINITY;
        let mut dual_res = f64::INFINITY;

        for iter in 1..=s.max_iter {
            iterations = iter;
            for i in 0..n {
                rhs[i] = s.sigma * x[i] - problem.q[i];
            }
            for i in 0..m {
                rhs[n + i] = z[i] - y[i] / rho[i];
            }
            factor.solve(&mut rhs);

            let mut dy_full = vec![0.0; m];
            for i in 0..n {
                x[i] = s.alpha * rhs[i] + (1.0 - s.alpha) * x[i];
            }
            for i in 0..m {
                let zt = z[i] + (rhs[n + i] - y[i]) / rho[i];
                let zr = s.alpha * zt + (1.0 - s.alpha) * z[i];
                let z_new = (zr + y[i] / rho[i]).clamp(problem.l[i], problem.u[i]);
                let y_new = y[i] + rho[i] * (zr - z_new);
                dy_full[i] = y_new - y[i];
                z[i] = z_new;
                y[i] = y_new;
            }

            let ax = problem.a.mul_vec(&x);
            let px = problem.p.mul_vec(&x);
            let aty = problem.a.tr_mul_vec(&y);
            prim_res = ax.iter().zip(&z).fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
            dual_res = (0..n).fold(0.0f64, |acc, i| acc.max((px[i] + problem.q[i] + aty[i]).abs()));
            let prim_scale = norm_inf(&ax).max(norm_inf(&z));
            let dual_scale = norm_inf(&px).max(norm_inf(&aty)).max(norm_inf(&problem.q));

            if prim_res <= s.eps_abs + s.eps_rel * prim_scale && dual_res <= s.eps_abs + s.eps_rel * dual_scale {
                status = QStatus::Solved;
                break;
            }
            if primal_infeasible(problem, &dy_full, s.eps_prim_inf) {
                status = QStatus::PrimalInfeasible;
                break;
            }
            if s.adaptive_rho && iter % s.adaptive_rho_interval == 0 && m > 0 {
                let ratio = (prim_res / prim_scale.max(1e-10)) / (dual_res / dual_scale.max(1e-10)).max(1e-30);
                let candidate = (rho_scalar * ratio.sqrt()).clamp(1e-6, 1e6);
                if candidate > rho_scalar * s.adaptive_rho_tolerance
                    || candidate < rho_scalar / s.adaptive_rho_tolerance
                {
                    rho_scalar = candidate;
                    rho = self.rho_vec(rho_scalar, &kinds);
                    factor = self.factor(problem, &rho)?;
                }
            }
        }

        let mut sol = QSolution {
            x,
            y,
            z,
            status,
            iterations,
            primal_residual: prim_res,
            dual_residual: dual_res,
            rho: rho_scalar,
            polished: false,
        };
        if status == QStatus::Solved && s.polish {
            polish(problem, &s, &mut sol);
        } else if status == QStatus::MaxIter && s.polish {
            // an active-set solve can still finish a stalled run
            polish(problem, &s, &mut sol);
            if sol.polished && sol.primal_residual <= s.eps_abs && sol.dual_residual <= s.eps_abs {
                sol.status = QStatus::Solved;
            }
        }
        Ok(sol)
    }
}

fn primal_infeasible(problem: &QProblem, dy: &[f64], eps: f64) -> bool {
    let mut d: Vec<f64> = dy.to_vec();
    for i in 0..d.len() {
        if is_inf(problem.u[i]) {
            d[i] = d[i].min(0.0);
        }
        if is_inf(problem.l[i]) {
            d[i] = d[i].max(0.0);
        }
    }
    let nd = norm_inf(&d);
    if nd < 1e-12 {
        return false;
    }
    let atd = problem.a.tr_mul_vec(&d);
    if norm_inf(&atd) > eps * nd {
        return false;
    }
    let support: f64 = (0..d.len())
        .map(|i| {
            if d[i] > 0.0 {
                problem.u[i] * d[i]
            } else if d[i] < 0.0 {
                problem.l[i] * d[i]
            } else {
                0.0
            }
        })
        .sum();
    support < -eps * nd
}

/// Solves the equality-constrained problem on the guessed active set and
/// keeps the result if it is at least as accurate as the ADMM iterate.
fn polish(problem: &QProblem, s: &QpSettings, sol: &mut QSolution) {
    let (n, m) = (problem.n(), problem.m());
    // (row, bound value, +1 upper / −1 lower / 0 equality)
    let mut active: Vec<(usize, f64, i8)> = Vec::new();
    for i in 0..m {
        let (l, u) = (problem.l[i], problem.u[i]);
        if !is_inf(l) && !is_inf(u) && (u - l).abs() < 1e-12 * (1.0 + l.abs()) {
            active.push((i, l, 0));
        } else if !is_inf(l) && sol.z[i] - l < -sol.y[i] {
            active.push((i, l, -1));
        } else if !is_inf(u) && u - sol.z[i] < sol.y[i] {
            active.push((i, u, 1));
        }
    }
    let k = active.len();
    let a_rows: Vec<Vec<(usize, f64)>> = {
        let mut rows = vec![Vec::new(); m];
        for (r, c, v) in problem.a.triplets() {
            rows[r].push((c, v));
        }
        rows
    };
    let mut t: Vec<(usize, usize, f64)> = problem.p.triplets().filter(|&(r, c, _)| r <= c).collect();
    t.extend((0..n).map(|i| (i, i, s.polish_delta)));
    for (j, &(row, _, _)) in active.iter().enumerate() {
        for &(c, v) in &a_rows[row] {
            t.push((c, n + j, v));
        }
        t.push((n + j, n + j, -s.polish_delta));
    }
    let kkt = match CscMatrix::from_triplets(n + k, n + k, &t).and_then(|m| LdlFactor::new(&m)) {
        Ok(f) => f,
        Err(e) => {
            log::debug!("polish factorization failed: {e}");
            return;
        }
    };
    let mut rhs = vec![0.0; n + k];
    for i in 0..n {
        rhs[i] = -problem.q[i];
    }
    for (j, &(_, b, _)) in active.iter().enumerate() {
        rhs[n + j] = b;
    }
    let mut solution = rhs.clone();
    kkt.solve(&mut solution);
    // iterative refinement against the unregularized system
    for _ in 0..s.polish_refine_iter {
        let xs = &solution[..n];
        let ys = &solution[n..];
        let px = problem.p.mul_vec(xs);
        let mut r = rhs.clone();
        for i in 0..n {
            r[i] -= px[i];
        }
        for (j, &(row, _, _)) in active.iter().enumerate() {
            let mut ax = 0.0;
            for &(c, v) in &a_rows[row] {
                ax += v * xs[c];
                r[c] -= v * ys[j];
            }
            r[n + j] -= ax;
        }
        kkt.solve(&mut r);
        for (a, d) in solution.iter_mut().zip(&r) {
            *a += d;
        }
    }

    let x = solution[..n].to_vec();
    let mut y = vec![0.0; m];
    for (j, &(row, _, side)) in active.iter().enumerate() {
        let v = solution[n + j];
        // a multiplier with the wrong sign means the active set guess is off
        if (side < 0 && v > s.eps_abs) || (side > 0 && v < -s.eps_abs) {
            return;
        }
        y[row] = v;
    }
    let ax = problem.a.mul_vec(&x);
    let z: Vec<f64> = (0..m).map(|i| ax[i].clamp(problem.l[i], problem.u[i])).collect();
    let prim = ax.iter().zip(&z).fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
    let px = problem.p.mul_vec(&x);
    let aty = problem.a.tr_mul_vec(&y);
    let dual = (0..n).fold(0.0f64, |acc, i| acc.max((px[i] + problem.q[i] + aty[i]).abs()));
    if !(prim.is_finite() && dual.is_finite()) {
        return;
    }
    if prim <= sol.primal_residual.max(1e-9) && dual <= sol.dual_residual.max(1e-9) {
        sol.x = x;
        sol.y = y;
        sol.z = z;
        sol.primal_residual = prim;
        sol.dual_residual = dual;
        sol.polished = true;
    }
}
