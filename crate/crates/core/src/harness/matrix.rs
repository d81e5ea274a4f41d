//! Scenario matrix runs and their aggregate report.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::ceth::Ceth;
use crate::error::{Error, Result};
use crate::plant::Episode;
use crate::tcn::TcnModel;

use super::config::Config;
use super::episode::{run_episode, EpisodeInputs, EpisodeResult};
use super::forecast::ForecastCache;
use super::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DurationStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl DurationStats {
    /// Population statistics; `None` for an empty sample.
    pub fn of(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            min: samples.iter().copied().fold(f64::INFINITY, f64::min),
            max: samples.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioRow {
    pub scenario: Scenario,
    pub episodes: Vec<EpisodeResult>,
    pub success_pct: f64,
    pub collisions: usize,
    pub duration: Option<DurationStats>,
}

impl ScenarioRow {
    pub fn from_results(scenario: Scenario, episodes: Vec<EpisodeResult>) -> Self {
        let n = episodes.len().max(1) as f64;
        let successes = episodes.iter().filter(|e| e.success).count();
        let durations: Vec<f64> = episodes.iter().filter_map(|e| e.duration).collect();
        Self {
            scenario,
            success_pct: 100.0 * successes as f64 / n,
            collisions: episodes.iter().filter(|e| e.collision).count(),
            duration: DurationStats::of(&durations),
            episodes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatrixReport {
    pub rows: Vec<ScenarioRow>,
}

impl MatrixReport {
    pub fn row(&self, scenario: &Scenario) -> Option<&ScenarioRow> {
        self.rows.iter().find(|r| r.scenario == *scenario)
    }

    /// Key-value report text; duration fields read `NA` without successes.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let label = r.scenario.label();
            let _ = writeln!(s, "[{label}]");
            let _ = writeln!(s, "episodes = {}", r.episodes.len());
            let _ = writeln!(s, "success_pct = {:.1}", r.success_pct);
            let _ = writeln!(s, "collisions = {}", r.collisions);
            let fmt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.2}"));
            let d = r.duration;
            let _ = writeln!(s, "duration_mean = {}", fmt(d.map(|d| d.mean)));
            let _ = writeln!(s, "duration_std = {}", fmt(d.map(|d| d.std)));
            let _ = writeln!(s, "duration_min = {}", fmt(d.map(|d| d.min)));
            let _ = writeln!(s, "duration_max = {}", fmt(d.map(|d| d.max)));
            let min_clear = r.episodes.iter().map(|e| e.min_clearance).fold(f64::INFINITY, f64::min);
            let _ = writeln!(s, "min_clearance = {min_clear:.3}");
            s.push('\n');
        }
        s
    }

    /// One line per (scenario, episode).
    pub fn write_episode_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["scenario", "episode", "success", "collision", "duration", "min_clearance", "ticks", "trace"])?;
        for r in &self.rows {
            for (i, e) in r.episodes.iter().enumerate() {
                w.write_record([
                    r.scenario.label(),
                    i.to_string(),
                    e.success.to_string(),
                    e.collision.to_string(),
                    e.duration.map_or("NA".into(), |d| d.to_string()),
                    e.min_clearance.to_string(),
                    e.ticks.to_string(),
                    e.trace_path.as_ref().map_or(String::new(), |p| p.display().to_string()),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Rebuilds a report from [`MatrixReport::write_episode_csv`] output,
    /// keeping the scenario order of first appearance.
    pub fn read_episode_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut groups: Vec<(Scenario, Vec<EpisodeResult>)> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).ok_or_else(|| Error::format(path, format!("missing column {i}")));
            let bad = |what: &str| Error::format(path, format!("bad {what} on line {}", rec.position().map_or(0, |p| p.line())));
            let scenario: Scenario = field(0)?.parse()?;
            let result = EpisodeResult {
                success: field(2)?.parse().map_err(|_| bad("success"))?,
                collision: field(3)?.parse().map_err(|_| bad("collision"))?,
                duration: match field(4)? {
                    "NA" => None,
                    d => Some(d.parse().map_err(|_| bad("duration"))?),
                },
                min_clearance: field(5)?.parse().map_err(|_| bad("min_clearance"))?,
                ticks: field(6)?.parse().map_err(|_| bad("ticks"))?,
                trace_path: Some(field(7)?).filter(|t| !t.is_empty()).map(Into::into),
            };
            match groups.iter_mut().find(|(s, _)| *s == scenario) {
                Some((_, v)) => v.push(result),
                None => groups.push((scenario, vec![result])),
            }
        }
        Ok(Self {
            rows: groups.into_iter().map(|(s, e)| ScenarioRow::from_results(s, e)).collect(),
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let report = dir.join("report.txt");
        std::fs::write(&report, self.render()).map_err(|e| Error::io(&report, e))?;
        self.write_episode_csv(&dir.join("episodes.csv"))
    }
}

/// Forecast caches for every episode, or `None` without a model.
pub fn build_forecasts(config: &Config, model: Option<&TcnModel>, episodes: &[Episode]) -> Result<Vec<Option<ForecastCache>>> {
    let steps = config.mpc.horizon.max(config.run.detection_steps);
    match model {
        None => Ok(vec![None; episodes.len()]),
        Some(m) => parallel_map(episodes, |ep| ForecastCache::build(m, ep, steps, &config.forecast).map(Some)),
    }
}

/// Runs every scenario on every episode. Trace files go to
/// `trace_dir/<scenario>_ep<i>.csv` when a directory is given.
pub fn run_matrix(
    config: &Config,
    scenarios: &[Scenario],
    episodes: &[Episode],
    model: Option<&TcnModel>,
    ceth: &Ceth,
    trace_dir: Option<&Path>,
) -> Result<MatrixReport> {
    if let Some(d) = trace_dir {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let forecasts = build_forecasts(config, model, episodes)?;
    let jobs: Vec<(usize, usize)> = (0..scenarios.len())
        .flat_map(|s| (0..episodes.len()).map(move |e| (s, e)))
        .collect();
    let results = parallel_map(&jobs, |&(s, e)| {
        let scenario = &scenarios[s];
        let path = trace_dir.map(|d| d.join(format!("{}_ep{e:02}.csv", scenario.label())));
        let inputs = EpisodeInputs {
            config,
            ceth,
            forecasts: forecasts[e].as_ref(),
            noise_seed: config.seed ^ episodes[e].spec.seed,
            trace_path: path.as_deref(),
        };
        run_episode(scenario, &episodes[e], &inputs)
    })?;
    let mut it = results.into_iter();
    let rows = scenarios
        .iter()
        .map(|s| ScenarioRow::from_results(*s, it.by_ref().take(episodes.len()).collect()))
        .collect();
    Ok(MatrixReport { rows })
}

/// Ordered map over a slice on scoped worker threads.
fn parallel_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len().max(1));
    if threads <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<Result<R>>> = (0..items.len()).map(|_| None).collect();
    let collected = std::sync::Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                collected.lock().expect("no poisoned workers").push((i, r));
            });
        }
    });
    for (i, r) in collected.into_inner().expect("no poisoned workers") {
        slots[i] = Some(r);
    }
    slots.into_iter().map(|r| r.expect("every job ran")).collect()
}
