use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use gustdock::ceth::HullLut;
use gustdock::harness::{
    build_ceth, ceth_from_lut, rolling_mse, run_episode, run_matrix, Config, EpisodeInputs, ForecastCache, MatrixReport,
    Scenario, VelocityModel,
};
use gustdock::plant::{generate_dataset, read_dataset, write_dataset, DatasetKind, Episode};
use gustdock::tcn::{load_checkpoint, save_checkpoint, train, Checkpoint, TcnModel};
use gustdock::Error;

#[derive(Parser)]
#[command(name = "gustdock", version, about = "Gust-aware UAV docking on a blimp")]
struct Cli {
    /// TOML configuration; `default` uses the built-in defaults.
    #[arg(long, global = true, default_value = "default")]
    config: PathBuf,
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Root directory of every artifact.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset and write it to `<out-dir>/data/<kind>`.
    GenData {
        #[arg(long, default_value = "training")]
        kind: String,
    },
    /// Train the TCN on a training dataset.
    Train {
        /// Dataset directory [default: <out-dir>/data/training].
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint path [default: <out-dir>/model.ckpt].
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Rolling MSE of the TCN and constant-velocity predictors.
    EvalTcn {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 15)]
        n: usize,
        #[arg(long, default_value_t = 98)]
        k: usize,
    },
    /// Build the hull look-up table.
    PrecomputeLut {
        /// Output path [default: <out-dir>/hull.lut].
        #[arg(long)]
        lut: Option<PathBuf>,
    },
    /// Run one scenario on one evaluation episode.
    RunEpisode {
        /// Scenario label, e.g. `active-tcn-safety`.
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 0)]
        episode: usize,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        lut: Option<PathBuf>,
    },
    /// Run every scenario on every evaluation episode.
    RunMatrix {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        lut: Option<PathBuf>,
        /// Comma-separated scenario labels [default: all eight].
        #[arg(long)]
        scenarios: Option<String>,
    },
    /// Render a matrix report from its per-episode CSV.
    Report {
        /// Directory holding `episodes.csv` [default: <out-dir>/matrix].
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

/// Validation failures exit with 1, runtime failures with 2.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Invalid(_) | Error::Config(_) | Error::Shape(_) | Error::Format { .. } => Failure::Usage(e.to_string()),
            Error::Io { .. } | Error::Csv(_) | Error::Numeric(_) => Failure::Runtime(e.to_string()),
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

struct Ctx {
    config: Config,
    out_dir: PathBuf,
}

impl Ctx {
    fn or_default(&self, given: Option<PathBuf>, rel: &str) -> PathBuf {
        given.unwrap_or_else(|| self.out_dir.join(rel))
    }

    fn dataset(&self, given: Option<PathBuf>, kind: DatasetKind) -> std::result::Result<Vec<Episode>, Failure> {
        let dir = self.or_default(given, &format!("data/{}", kind.name()));
        require(&dir, "dataset directory (run `gen-data` first)")?;
        Ok(read_dataset(&dir)?)
    }

    fn model(&self, given: Option<PathBuf>) -> std::result::Result<TcnModel, Failure> {
        let path = self.or_default(given, "model.ckpt");
        require(&path, "model checkpoint (run `train` first)")?;
        Ok(load_checkpoint(&path)?.model)
    }

    fn ceth(&self, given: Option<PathBuf>) -> std::result::Result<gustdock::ceth::Ceth, Failure> {
        let path = self.or_default(given, "hull.lut");
        if path.exists() {
            Ok(ceth_from_lut(&self.config, HullLut::load(&path)?)?)
        } else {
            eprintln!("no table at {}, building it in memory", path.display());
            Ok(build_ceth(&self.config)?)
        }
    }
}

fn require(path: &Path, what: &str) -> Outcome {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("missing {what}: {}", path.display())))
    }
}

fn mkdir(path: &Path) -> Outcome {
    std::fs::create_dir_all(path).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", path.display())))
}

fn run(cli: Cli) -> Outcome {
    if cli.config.as_os_str() != "default" {
        require(&cli.config, "config file")?;
    }
    let mut config = Config::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
        config.train.seed = seed;
    }
    let ctx = Ctx {
        config,
        out_dir: cli.out_dir,
    };
    let cfg = &ctx.config;
    mkdir(&ctx.out_dir)?;

    match cli.command {
        Command::GenData { kind } => {
            let kind: DatasetKind = kind.parse()?;
            let t = Instant::now();
            let episodes = generate_dataset(kind, &cfg.dataset, &cfg.plant, cfg.seed)?;
            let dir = ctx.out_dir.join("data").join(kind.name());
            write_dataset(&dir, kind, &episodes, &cfg.plant)?;
            println!("wrote {} {} episodes to {} in {:.1?}", episodes.len(), kind.name(), dir.display(), t.elapsed());
        }
        Command::Train { data, model } => {
            let episodes = ctx.dataset(data, DatasetKind::Training)?;
            let t = Instant::now();
            let out = train(TcnModel::for_training(&cfg.train), &episodes, &cfg.train)?;
            let path = ctx.or_default(model, "model.ckpt");
            save_checkpoint(
                &path,
                &Checkpoint {
                    model: out.model,
                    train_config: cfg.train.clone(),
                },
            )?;
            let curve = path.with_extension("loss.csv");
            out.curve.write_csv(&curve)?;
            let best = &out.curve.epochs[out.best_epoch];
            println!(
                "trained {} epochs in {:.1?}; best epoch {} (val loss {:.3e}); checkpoint {}, loss curve {}",
                out.curve.epochs.len(),
                t.elapsed(),
                out.best_epoch,
                best.val_loss.unwrap_or(best.train_loss),
                path.display(),
                curve.display()
            );
        }
        Command::EvalTcn { data, model, n, k } => {
            let model = ctx.model(model)?;
            let episodes = ctx.dataset(data, DatasetKind::Evaluation)?;
            let t = Instant::now();
            let tcn = rolling_mse(VelocityModel::Tcn, Some(&model), &episodes, n, k, &cfg.forecast)?;
            let cv = rolling_mse(VelocityModel::Constant, None, &episodes, n, k, &cfg.forecast)?;
            let mut text = String::from("axis,tcn,cv,improvement_pct\n");
            for (a, name) in ["x", "y", "z"].iter().enumerate() {
                text += &format!("{name},{:.6e},{:.6e},{:.1}\n", tcn[a], cv[a], 100.0 * (1.0 - tcn[a] / cv[a]));
            }
            let path = ctx.out_dir.join("rolling_mse.csv");
            std::fs::write(&path, &text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
            print!("{text}");
            println!("evaluated {} episodes in {:.1?}", episodes.len(), t.elapsed());
        }
        Command::PrecomputeLut { lut } => {
            let t = Instant::now();
            let c = &cfg.ceth;
            let table = HullLut::for_zone(&c.zone, c.lut_cell, c.params.d_band_rep)?;
            let path = ctx.or_default(lut, "hull.lut");
            table.save(&path)?;
            println!("wrote {:?} cells to {} in {:.1?}", table.grid.dims, path.display(), t.elapsed());
        }
        Command::RunEpisode {
            scenario,
            episode,
            data,
            model,
            lut,
        } => {
            let scenario: Scenario = scenario.parse()?;
            let episodes = ctx.dataset(data, DatasetKind::Evaluation)?;
            let ep = episodes
                .get(episode)
                .ok_or_else(|| Failure::Usage(format!("episode {episode} out of range (have {})", episodes.len())))?;
            let needs_model = scenario.velocity_model == VelocityModel::Tcn || scenario.uses_detection();
            let model = if needs_model { Some(ctx.model(model)?) } else { None };
            let ceth = ctx.ceth(lut)?;
            let forecasts = match &model {
                Some(m) => Some(ForecastCache::build(
                    m,
                    ep,
                    cfg.mpc.horizon.max(cfg.run.detection_steps),
                    &cfg.forecast,
                )?),
                None => None,
            };
            let trace = ctx.out_dir.join(format!("{scenario}_ep{episode:02}.csv"));
            let inputs = EpisodeInputs {
                config: cfg,
                ceth: &ceth,
                forecasts: forecasts.as_ref(),
                noise_seed: cfg.seed ^ ep.spec.seed,
                trace_path: cfg.run.write_traces.then_some(trace.as_path()),
            };
            let r = run_episode(&scenario, ep, &inputs)?;
            println!(
                "{scenario} episode {episode}: success {} collision {} duration {} min clearance {:.3} m",
                r.success,
                r.collision,
                r.duration.map_or("NA".into(), |d| format!("{d:.1} s")),
                r.min_clearance
            );
        }
        Command::RunMatrix {
            data,
            model,
            lut,
            scenarios,
        } => {
            let scenarios = match scenarios {
                Some(s) => s.split(',').map(|l| l.trim().parse()).collect::<gustdock::Result<Vec<Scenario>>>()?,
                None => Scenario::all(),
            };
            let episodes = ctx.dataset(data, DatasetKind::Evaluation)?;
            let needs_model = scenarios
                .iter()
                .any(|s| s.velocity_model == VelocityModel::Tcn || s.uses_detection());
            let model = if needs_model { Some(ctx.model(model)?) } else { None };
            let ceth = ctx.ceth(lut)?;
            let dir = ctx.out_dir.join("matrix");
            let traces = dir.join("traces");
            let t = Instant::now();
            let report = run_matrix(
                cfg,
                &scenarios,
                &episodes,
                model.as_ref(),
                &ceth,
                cfg.run.write_traces.then_some(traces.as_path()),
            )?;
            report.write(&dir)?;
            print!("{}", report.render());
            println!("matrix of {} runs in {:.1?}; report in {}", scenarios.len() * episodes.len(), t.elapsed(), dir.display());
        }
        Command::Report { dir } => {
            let dir = ctx.or_default(dir, "matrix");
            let csv = dir.join("episodes.csv");
            require(&csv, "per-episode CSV (run `run-matrix` first)")?;
            let report = MatrixReport::read_episode_csv(&csv)?;
            let text = report.render();
            let path = dir.join("report.txt");
            std::fs::write(&path, &text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
