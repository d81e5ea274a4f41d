//! End-to-end acceptance checks. Everything runs inside one test so the
//! runtime limits are measured without other tests competing for the CPU.
//! One PASS/FAIL line per criterion goes straight to stderr, so it shows up
//! without `--nocapture`.

mod common;

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use common::{box_oracle, spd, to_csc};
use gustdock::ceth::{repulsive_force, shaping, tangential_force, HullLut, HullSample, NoFlyZone};
use gustdock::detect::detect;
use gustdock::harness::{build_ceth, forecast_at, history, rolling_mse, run_matrix, Config, Scenario, VelocityModel};
use gustdock::mpc::{reference_from_velocity, Mpc, MpcState, ReferenceTrajectory, WeightMode};
use gustdock::plant::{generate_dataset, step_uav, write_dataset, DatasetKind, Episode};
use gustdock::qp::{solve, CscMatrix, QProblem, QStatus, QpSettings};
use gustdock::tcn::{flatten, mse_loss, save_checkpoint, train, Checkpoint, LossWeighting, TcnModel, TrainConfig, N_PRED};
use gustdock::world::{UavState, Vec3};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn announce(id: usize, o: &Outcome) {
    let verdict = if o.pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {id}: {verdict}: {}", o.detail);
}

fn secs(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}

// ---------------------------------------------------------------- criterion 1

struct Trained {
    config: Config,
    model: TcnModel,
    evaluation: Vec<Episode>,
}

fn tcn_vs_constant_velocity() -> (Outcome, Trained) {
    let config = Config::default();
    let t = Instant::now();
    let training = generate_dataset(DatasetKind::Training, &config.dataset, &config.plant, config.seed).unwrap();
    let evaluation = generate_dataset(DatasetKind::Evaluation, &config.dataset, &config.plant, config.seed).unwrap();
    let gen_time = t.elapsed();

    let t = Instant::now();
    let out = train(TcnModel::for_training(&config.train), &training, &config.train).unwrap();
    let train_time = t.elapsed();

    let t = Instant::now();
    let tcn = rolling_mse(VelocityModel::Tcn, Some(&out.model), &evaluation, 15, 98, &config.forecast).unwrap();
    let cv = rolling_mse(VelocityModel::Constant, None, &evaluation, 15, 98, &config.forecast).unwrap();
    let eval_time = t.elapsed();

    let improvement: Vec<f64> = (0..3).map(|a| 100.0 * (1.0 - tcn[a] / cv[a])).collect();
    let pass = improvement.iter().all(|&i| i >= 40.0)
        && gen_time < Duration::from_secs(120)
        && train_time < Duration::from_secs(1800)
        && eval_time < Duration::from_secs(60);
    let detail = format!(
        "improvement x {:.1}% y {:.1}% z {:.1}% (need >= 40%); tcn {:.3e}/{:.3e}/{:.3e} cv {:.3e}/{:.3e}/{:.3e}; data {}, training {}, evaluation {}",
        improvement[0],
        improvement[1],
        improvement[2],
        tcn[0],
        tcn[1],
        tcn[2],
        cv[0],
        cv[1],
        cv[2],
        secs(gen_time),
        secs(train_time),
        secs(eval_time)
    );
    (
        outcome(pass, detail),
        Trained {
            config,
            model: out.model,
            evaluation,
        },
    )
}

// ---------------------------------------------------------------- criterion 2

fn gust_detection(trained: &Trained) -> Outcome {
    let Trained {
        config,
        model,
        evaluation,
    } = trained;
    let t = Instant::now();
    let span = config.detection.span();
    let dt = config.plant.dt;
    // forecasts depend on the history only, and calm histories repeat
    let mut memo: HashMap<Vec<u64>, bool> = HashMap::new();
    let mut flags = |ep: &Episode, i: usize| -> bool {
        let key: Vec<u64> = flatten(&history(ep, i)).iter().map(|v| v.to_bits()).collect();
        *memo.entry(key).or_insert_with(|| {
            let mut series = vec![ep.blimp_trace[i].velocity];
            series.extend(forecast_at(Some(model), ep, i, span - 1, &config.forecast).unwrap());
            detect(&series, &config.detection).unwrap().gust_detected
        })
    };

    let horizon = span as f64 * dt;
    let mut hits = 0;
    for ep in evaluation {
        let (t0, t1) = (ep.spec.t0, ep.spec.t0 + ep.spec.gust_duration);
        // prediction windows [t, t + horizon) overlapping the gust
        let hit = (0..ep.len())
            .filter(|&i| {
                let ti = i as f64 * dt;
                ti + horizon > t0 && ti <= t1
            })
            .any(|i| flags(ep, i));
        hits += hit as usize;
    }

    let calm = generate_dataset(DatasetKind::Calm, &config.dataset, &config.plant, config.seed).unwrap();
    let false_positives = calm.iter().filter(|ep| (0..ep.len()).any(|i| flags(ep, i))).count();
    let elapsed = t.elapsed();
    let pass = hits == evaluation.len() && false_positives == 0 && elapsed < Duration::from_secs(60);
    outcome(
        pass,
        format!(
            "{hits}/{} gusts flagged, {false_positives}/{} calm episodes with false positives, {}",
            evaluation.len(),
            calm.len(),
            secs(elapsed)
        ),
    )
}

// ---------------------------------------------------------------- criterion 3

fn qp_correctness() -> Outcome {
    let t = Instant::now();
    let settings = QpSettings::default();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst_x = 0.0f64;
    let mut unsolved = 0;
    for case in 0..200 {
        let n = 1 + case % 3;
        let p = spd(&mut rng, n);
        let q = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
        let l: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.5..0.0)).collect();
        let u: Vec<f64> = l.iter().map(|v| v + rng.gen_range(0.1..2.0)).collect();
        let prob = QProblem {
            p: to_csc(&p),
            q: q.as_slice().to_vec(),
            a: CscMatrix::identity(n),
            l: l.clone(),
            u: u.clone(),
        };
        let s = solve(&prob, &settings).unwrap();
        unsolved += (s.status != QStatus::Solved) as usize;
        let x_ref = box_oracle(&p, &q, &l, &u);
        worst_x = (0..n).map(|i| (s.x[i] - x_ref[i]).abs()).fold(worst_x, f64::max);
    }

    let mut worst_kkt = 0.0f64;
    for _ in 0..50 {
        let n = rng.gen_range(2..=20);
        let m = rng.gen_range(1..=40);
        let p = spd(&mut rng, n);
        let q: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let a = DMatrix::from_fn(m, n, |_, _| if rng.gen_bool(0.4) { rng.gen_range(-2.0..2.0) } else { 0.0 });
        let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let ax0 = &a * &x0;
        let (mut l, mut u) = (Vec::new(), Vec::new());
        for i in 0..m {
            if rng.gen_bool(0.25) {
                l.push(f64::NEG_INFINITY);
            } else {
                l.push(ax0[i] - rng.gen_range(0.0..1.0));
            }
            u.push(ax0[i] + rng.gen_range(0.0..1.0));
        }
        let prob = QProblem {
            p: to_csc(&p),
            q: q.clone(),
            a: to_csc(&a),
            l: l.clone(),
            u: u.clone(),
        };
        let s = solve(&prob, &settings).unwrap();
        unsolved += (s.status != QStatus::Solved) as usize;
        let px = prob.p.mul_vec(&s.x);
        let aty = prob.a.tr_mul_vec(&s.y);
        let ax = prob.a.mul_vec(&s.x);
        let stationarity = (0..n).map(|i| (px[i] + q[i] + aty[i]).abs()).fold(0.0, f64::max);
        let primal = (0..m).map(|i| (l[i] - ax[i]).max(ax[i] - u[i]).max(0.0)).fold(0.0, f64::max);
        // y_i > 0 only on the upper bound, y_i < 0 only on the lower bound
        let complementarity = (0..m)
            .map(|i| {
                let y = s.y[i];
                if y > 0.0 {
                    y.min(u[i] - ax[i]).max(0.0)
                } else {
                    (-y).min(ax[i] - l[i]).max(0.0)
                }
            })
            .fold(0.0, f64::max);
        worst_kkt = worst_kkt.max(stationarity).max(primal).max(complementarity);
    }
    let elapsed = t.elapsed();
    let pass = unsolved == 0 && worst_x <= 1e-5 && worst_kkt <= 1e-4 && elapsed < Duration::from_secs(30);
    outcome(
        pass,
        format!(
            "box-QP max |x - x_oracle| {worst_x:.2e} (<= 1e-5), general max KKT residual {worst_kkt:.2e} (<= 1e-4), {unsolved} unsolved, {}",
            secs(elapsed)
        ),
    )
}

// ---------------------------------------------------------------- criterion 4

fn loss_of(model: &TcnModel, x: &[f64], y: &[f64], w: &[f64; N_PRED]) -> f64 {
    mse_loss(&model.forward(x).unwrap(), y, w, None)
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut model = TcnModel::new().init_he_normal(41);
    for p in model.params.iter_mut() {
        *p += rng.gen_range(-0.05..0.05);
    }
    let x: Vec<f64> = (0..N_PRED * 6).map(|_| rng.gen_range(0.0..1.0)).collect();
    let y: Vec<f64> = (0..N_PRED * 6).map(|_| rng.gen_range(0.0..1.0)).collect();
    let w = LossWeighting::Uniform.weights();
    let cache = model.forward_cached(&x, N_PRED);
    let mut d_out = vec![0.0; x.len()];
    mse_loss(&cache.output, &y, &w, Some(&mut d_out));
    let mut grad = vec![0.0; model.num_params()];
    model.backward(&cache, &d_out, &mut grad);

    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut checked = 0;
    let blocks = model.blocks().len();
    for b in 0..blocks {
        let ranges: Vec<(usize, usize)> = model
            .tensors()
            .into_iter()
            .filter(|t| t.0 == b)
            .map(|(_, _, start, len)| (start, len))
            .collect();
        for k in 0..12 {
            let (start, len) = ranges[k % ranges.len()];
            let i = start + rng.gen_range(0..len);
            let mut plus = model.clone();
            plus.params[i] += h;
            let mut minus = model.clone();
            minus.params[i] -= h;
            let fd = (loss_of(&plus, &x, &y, &w) - loss_of(&minus, &x, &y, &w)) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    outcome(
        worst <= 1e-4,
        format!("{checked} parameters over {blocks} layers, max relative error {worst:.2e} (<= 1e-4)"),
    )
}

// ---------------------------------------------------------------- criterion 5

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if v.norm() > 1e-3 {
            return v.normalize();
        }
    }
}

fn ceth_properties(config: &Config) -> Outcome {
    let params = config.ceth.params;
    let zone: &NoFlyZone = &config.ceth.zone;
    let mut rng = ChaCha8Rng::seed_from_u64(51);

    // continuity of the repulsive magnitude across d_b
    let magnitude = |d: f64| {
        let s = HullSample {
            distance: d,
            closest_point: Vec3::zeros(),
            normal: Vec3::z(),
            inside_zone: false,
        };
        repulsive_force(&s, &params).norm()
    };
    let db = params.d_band_rep;
    let samples: Vec<f64> = (-500..=500).map(|k| magnitude(db + k as f64 * 1e-3)).collect();
    let max_jump = samples.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
    let beyond_zero = samples[500..].iter().all(|&m| m == 0.0);
    let limit = magnitude(db - 1e-3);
    let continuous = max_jump <= 1e-4 && beyond_zero && limit <= 1e-4 && shaping(db, &params) == 0.0;

    // clamps and orthogonality over random positions around the zone
    let lo = zone.bounds().0 - Vec3::repeat(db + 1.0);
    let hi = zone.bounds().1 + Vec3::repeat(db + 1.0);
    let port = zone.port_body();
    let (mut max_rep, mut max_tang, mut worst_dot) = (0.0f64, 0.0f64, 0.0f64);
    let mut tangential_samples = 0;
    for _ in 0..20_000 {
        let p = Vec3::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y..hi.y), rng.gen_range(lo.z..hi.z));
        let s = zone.distance_and_normal(&p);
        max_rep = max_rep.max(repulsive_force(&s, &params).norm());
        let grad_norm = rng.gen_range(0.0..1e3);
        let fallback = Some(random_unit(&mut rng));
        let (f, _) = tangential_force(&p, &port, &s, grad_norm, &params, fallback);
        max_tang = max_tang.max(f.norm());
        let v = port - p;
        let v_perp = v - s.normal * v.dot(&s.normal);
        if s.distance <= params.d_band_tang && v_perp.norm() > params.epsilon && f.norm() > 0.0 {
            worst_dot = worst_dot.max(f.dot(&s.normal).abs() / f.norm());
            tangential_samples += 1;
        }
    }
    let clamps = max_rep <= params.f_max_rep + 1e-12 && max_tang <= params.f_max_tang + 1e-12;
    let orthogonal = worst_dot <= 1e-9 && tangential_samples > 100;

    // table accuracy against the exact distance inside the band
    let lut = HullLut::for_zone(&zone, config.ceth.lut_cell, db).unwrap();
    let mut worst_lut = 0.0f64;
    let mut queries = 0;
    while queries < 10_000 {
        let p = Vec3::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y..hi.y), rng.gen_range(lo.z..hi.z));
        let exact = zone.distance_and_normal(&p);
        if exact.inside_zone || exact.distance > db {
            continue;
        }
        worst_lut = worst_lut.max((lut.lookup_body(&p).distance - exact.distance).abs());
        queries += 1;
    }
    let accurate = worst_lut <= 0.217;

    outcome(
        continuous && clamps && orthogonal && accurate,
        format!(
            "|F_rep| max step {max_jump:.1e} near d_b, limit {limit:.1e}; max |F_rep| {max_rep:.3} (<= 6), max |F_tang| {max_tang:.3} (<= 2); \
             max |F_tang.n|/|F_tang| {worst_dot:.1e} over {tangential_samples} samples; LUT max error {worst_lut:.4} m over {queries} queries (<= 0.217)"
        ),
    )
}

// ---------------------------------------------------------------- criterion 7

fn integrator_and_closed_loop(config: &Config) -> Outcome {
    let dt = config.mpc.dt;
    let steps = 200;
    let v: Vec<Vec3> = (0..=steps)
        .map(|k| {
            let t = k as f64 * dt;
            Vec3::new(t * t, 1.0 - 2.0 * t + 0.5 * t * t, 3.0)
        })
        .collect();
    let p0 = Vec3::new(1.0, -2.0, 0.5);
    let r = reference_from_velocity(&v, p0, dt, steps).unwrap();
    let exact = |t: f64| p0 + Vec3::new(t.powi(3) / 3.0, t - t * t + t.powi(3) / 6.0, 3.0 * t);
    let simpson_err = (0..=steps)
        .step_by(2)
        .map(|k| (r.z[k].p - exact(k as f64 * dt)).amax())
        .fold(0.0, f64::max);

    let p = &config.mpc;
    let mut mpc = Mpc::new(p.clone(), config.qp.clone()).unwrap();
    let target = Vec3::new(7.0, -5.0, 3.0);
    let reference = ReferenceTrajectory {
        z: vec![MpcState::new(target, Vec3::zeros()); p.horizon + 1],
    };
    let (a_min, a_max) = (Vec3::from(p.a_min), Vec3::from(p.a_max));
    let (v_min, v_max) = (Vec3::from(p.v_min), Vec3::from(p.v_max));
    let mut uav = UavState::at_rest(Vec3::zeros());
    let mut violation = 0.0f64;
    let mut ticks = 0;
    let mut dist = f64::INFINITY;
    while ticks < 400 && dist > 0.05 {
        let out = mpc
            .build_and_solve(&MpcState::from_uav(&uav), &reference, &vec![Vec3::zeros(); p.horizon], WeightMode::Full)
            .unwrap();
        let a = out.plan.u_star[0].a;
        let v_next = uav.velocity + a * dt;
        for i in 0..3 {
            violation = violation
                .max(a_min[i] - a[i])
                .max(a[i] - a_max[i])
                .max(v_min[i] - v_next[i])
                .max(v_next[i] - v_max[i]);
        }
        uav = step_uav(&uav, &a, dt, &v_min, &v_max);
        dist = (uav.position - target).norm();
        ticks += 1;
    }
    let pass = simpson_err <= 1e-9 && dist <= 0.05 && violation <= 1e-4;
    outcome(
        pass,
        format!(
            "Simpson max error {simpson_err:.1e} over {steps} steps (<= 1e-9); closed loop reached {dist:.3} m after {ticks} ticks, max bound violation {violation:.1e} (<= 1e-4)"
        ),
    )
}

// ---------------------------------------------------------------- criterion 6

fn scenario_matrix(trained: &Trained, traces: &Path) -> Outcome {
    let config = &trained.config;
    let t = Instant::now();
    let ceth = build_ceth(config).unwrap();
    let report = run_matrix(
        config,
        &Scenario::all(),
        &trained.evaluation,
        Some(&trained.model),
        &ceth,
        Some(traces),
    )
    .unwrap();
    let elapsed = t.elapsed();
    let trace_files = std::fs::read_dir(traces).unwrap().count();

    let mut ok = true;
    let mut summary = Vec::new();
    for row in &report.rows {
        let s = row.scenario;
        let n = row.episodes.len();
        let label = s.label();
        summary.push(format!(
            "{label} {:.0}%/{}c/{}",
            row.success_pct,
            row.collisions,
            row.duration.map_or("NA".into(), |d| format!("{:.1}s", d.mean))
        ));
        if s.ceth == gustdock::harness::CethMode::Inactive && s.gust_policy == gustdock::harness::GustPolicy::NoAbort {
            ok &= row.success_pct == 0.0 && row.collisions == n;
        }
        if s.ceth == gustdock::harness::CethMode::Active && s.velocity_model == VelocityModel::Tcn {
            ok &= row.success_pct == 100.0 && row.collisions == 0;
        }
    }
    let mean = |label: &str| {
        let s: Scenario = label.parse().unwrap();
        report.row(&s).and_then(|r| r.duration).map(|d| d.mean)
    };
    let (tcn, cv) = (mean("active-tcn-safety"), mean("active-const-safety"));
    let faster = matches!((tcn, cv), (Some(a), Some(b)) if a < b);
    let pass = ok && faster && elapsed < Duration::from_secs(1200) && trace_files == 80;
    outcome(
        pass,
        format!(
            "{}; tcn-safety mean {:?} s vs const-safety {:?} s; {trace_files} traces; {}",
            summary.join(", "),
            tcn,
            cv,
            secs(elapsed)
        ),
    )
}

// ---------------------------------------------------------------- criterion 8

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn determinism(trained: &Trained, scratch: &Path) -> Outcome {
    let config = &trained.config;

    // dataset files
    let data_run = |tag: &str| {
        let mut all = Vec::new();
        for kind in [DatasetKind::Training, DatasetKind::Evaluation, DatasetKind::Calm] {
            let dir = scratch.join(format!("data_{tag}_{}", kind.name()));
            let eps = generate_dataset(kind, &config.dataset, &config.plant, config.seed).unwrap();
            write_dataset(&dir, kind, &eps, &config.plant).unwrap();
            all.extend(dir_bytes(&dir));
        }
        all
    };
    let data_same = data_run("a") == data_run("b");

    // checkpoints from a shortened training run
    let mut small = config.dataset.clone();
    small.training_levels = vec![(1.0, 4), (4.0, 4)];
    let episodes = generate_dataset(DatasetKind::Training, &small, &config.plant, config.seed).unwrap();
    let train_cfg = TrainConfig {
        epochs: 3,
        window_stride: 16,
        ..config.train.clone()
    };
    let ckpt_run = |tag: &str| {
        let out = train(TcnModel::for_training(&train_cfg), &episodes, &train_cfg).unwrap();
        let path = scratch.join(format!("model_{tag}.ckpt"));
        save_checkpoint(
            &path,
            &Checkpoint {
                model: out.model,
                train_config: train_cfg.clone(),
            },
        )
        .unwrap();
        std::fs::read(path).unwrap()
    };
    let ckpt_same = ckpt_run("a") == ckpt_run("b");

    // reports and traces of every scenario on one episode
    let ceth = build_ceth(config).unwrap();
    let matrix_run = |tag: &str| {
        let dir = scratch.join(format!("matrix_{tag}"));
        let report = run_matrix(
            config,
            &Scenario::all(),
            &trained.evaluation[..1],
            Some(&trained.model),
            &ceth,
            Some(&dir.join("traces")),
        )
        .unwrap();
        report.write(&dir).unwrap();
        let mut files = vec![("report".to_string(), std::fs::read(dir.join("report.txt")).unwrap())];
        files.extend(dir_bytes(&dir.join("traces")));
        files
    };
    let matrix_same = matrix_run("a") == matrix_run("b");

    outcome(
        data_same && ckpt_same && matrix_same,
        format!("identical datasets {data_same}, checkpoints {ckpt_same}, matrix reports and traces {matrix_same}"),
    )
}

#[test]
fn acceptance_criteria() {
    let scratch = tempfile::tempdir().unwrap();
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut record = |id: usize, o: Outcome| {
        announce(id, &o);
        results.push((id, o));
    };

    let config = Config::default();
    record(3, qp_correctness());
    record(4, gradient_check());
    record(5, ceth_properties(&config));
    record(7, integrator_and_closed_loop(&config));

    let (c1, trained) = tcn_vs_constant_velocity();
    record(1, c1);
    record(2, gust_detection(&trained));
    record(6, scenario_matrix(&trained, &scratch.path().join("traces")));
    record(8, determinism(&trained, scratch.path()));

    results.sort_by_key(|r| r.0);
    let failed: Vec<usize> = results.iter().filter(|r| !r.1.pass).map(|r| r.0).collect();
    let _ = writeln!(
        std::io::stderr(),
        "acceptance: {}/{} criteria pass",
        results.len() - failed.len(),
        results.len()
    );
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
