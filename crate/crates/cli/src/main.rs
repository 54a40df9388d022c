//! `bandgen` command-line interface.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime fault.

mod plot;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bandgen::config::{Config, Variant};
use bandgen::io::{read_logs, Checkpoint, LogWriter};
use bandgen::metrics;
use bandgen::microsim::{replay_log, ControllerKind, EpisodeLog};
use bandgen::oracle::{
    campaign_1d, sample_state_2d, score_case_2d, summarize_2d, EgoBounds, EscapeConfig,
};
use bandgen::risk::RiskCritic;
use bandgen::train::{train_dir, RunDir, Trainer};
use clap::{Parser, Subcommand, ValueEnum};

pub const RUNS_ROOT_ENV: &str = "BANDGEN_RUNS_ROOT";

#[derive(Parser)]
#[command(
    name = "bandgen",
    version,
    about = "Feasibility-guided adversarial scenario generation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a scenario policy into a run directory.
    Train {
        /// TOML config; defaults are used for absent keys (or entirely, without this flag).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run directory; defaults to `$BANDGEN_RUNS_ROOT/<template>-<variant>-s<seed>`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Resume from a checkpoint file; the run directory's config is used unless --config is given.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        episodes: Option<u64>,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        template: Option<String>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Copy the k most safety-critical episodes of a run.
    SampleTopk {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Output log file; defaults to `<run>/topk.jsonl`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay logged adversary actions open-loop against an ego controller.
    Eval {
        /// Run directory or episode log file.
        #[arg(long)]
        logs: PathBuf,
        /// Ego controller id, or `all`.
        #[arg(long, default_value = "all")]
        ego: String,
        /// Config for bare log files (run directories carry their own).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Check the feasibility score against a brute-force oracle.
    Oracle {
        #[arg(long, value_enum, default_value_t = Dim::D1)]
        dim: Dim,
        #[arg(long, default_value_t = 500)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.05)]
        band: f64,
    },
    /// Collision rate, invalid-frame rate, gap coverage and the coverage grid.
    Metrics {
        /// Run directory or episode log file.
        #[arg(long)]
        logs: PathBuf,
        /// Write the risk/feasibility coverage grid as CSV.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        dt: f64,
    },
    /// Print the threshold levels.
    Schedule {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Render a CSV to SVG.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = PlotKind::Curves)]
        kind: PlotKind,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Dim {
    #[value(name = "1")]
    D1,
    #[value(name = "2")]
    D2,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotKind {
    /// Training curves from metrics.csv.
    Curves,
    /// Invalid-frame rate per threshold level from metrics.csv.
    Invalid,
    /// Heatmap of a coverage grid CSV.
    Coverage,
}

/// Marks errors that should exit with the usage code.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<Usage>().is_some() {
        return 1;
    }
    match e.downcast_ref::<bandgen::Error>() {
        Some(bandgen::Error::Config(_)) | Some(bandgen::Error::Input(_)) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn runs_root() -> PathBuf {
    std::env::var_os(RUNS_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    Ok(match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    })
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Train {
            config,
            out,
            resume,
            seed,
            episodes,
            variant,
            template,
            workers,
        } => {
            let cfg_path = config.or_else(|| {
                // a checkpoint lives in <run>/checkpoints/, so its run config is two levels up
                resume
                    .as_ref()
                    .and_then(|r| r.parent()?.parent().map(|d| d.join("config.toml")))
            });
            let mut cfg = load_config(cfg_path.as_deref())?;
            if let Some(s) = seed {
                cfg.run.seed = s;
            }
            if let Some(e) = episodes {
                cfg.run.episodes = e;
            }
            if let Some(v) = variant {
                cfg.run.variant = v.parse::<Variant>()?;
            }
            if let Some(t) = template {
                cfg.run.template = t;
            }
            if let Some(w) = workers {
                cfg.run.workers = w;
            }
            cfg.validate()?;
            let dir = match (out, &resume) {
                (Some(o), _) => o,
                (None, Some(r)) => r
                    .parent()
                    .and_then(Path::parent)
                    .map(Path::to_path_buf)
                    .ok_or_else(|| {
                        usage("cannot infer the run directory from --resume; pass --out")
                    })?,
                (None, None) => runs_root().join(format!(
                    "{}-{}-s{}",
                    cfg.run.template,
                    serde_json::to_value(cfg.run.variant)?
                        .as_str()
                        .unwrap_or("run"),
                    cfg.run.seed
                )),
            };
            let t = train_dir(cfg, &RunDir::new(&dir), resume.as_deref())?;
            println!("run directory: {}", dir.display());
            println!("episodes: {}  iterations: {}", t.episode, t.iteration);
            Ok(())
        }
        Cmd::SampleTopk { run, k, out } => {
            let dir = RunDir::new(&run);
            let logs = read_logs(dir.episodes())?;
            let cfg = Config::load(dir.config()).unwrap_or_default();
            let window = (2.0 / cfg.world()?.dt).round() as usize;
            if logs.len() < k {
                log::warn!(
                    "only {} episodes available, returning all of them",
                    logs.len()
                );
            }
            let top = metrics::rank_topk(&logs, k, window);
            let out = out.unwrap_or_else(|| run.join("topk.jsonl"));
            let mut w = LogWriter::create(&out)?;
            for &i in &top {
                w.write(&logs[i])?;
                let (c, phi, s) = metrics::criticality_key(&logs[i], window);
                println!(
                    "episode {}  collided {c}  tail_phi {phi:.4}  min_pos_sigma {s:.4}",
                    logs[i].summary.episode
                );
            }
            w.flush()?;
            println!(
                "selected {} of {} episodes -> {}",
                top.len(),
                logs.len(),
                out.display()
            );
            Ok(())
        }
        Cmd::Eval { logs, ego, config } => {
            let (logs, cfg, critic) = load_logs(&logs, config.as_deref())?;
            if logs.is_empty() {
                return Err(bandgen::Error::Input("no episodes to evaluate".into()).into());
            }
            let egos: Vec<ControllerKind> = if ego == "all" {
                vec![
                    ControllerKind::RouteFollowerBrake,
                    ControllerKind::IdmPursuit,
                    ControllerKind::AggressiveVariant,
                ]
            } else {
                vec![ego.parse()?]
            };
            let mut world = cfg.world()?;
            let original = metrics::report(&logs, world.dt)?;
            let mut per = serde_json::Map::new();
            for e in egos {
                world.ego_controller = e;
                let replayed = logs
                    .iter()
                    .map(|l| replay_log(l, &world, critic.as_ref(), &cfg.feasibility))
                    .collect::<bandgen::Result<Vec<EpisodeLog>>>()?;
                per.insert(
                    e.as_str().into(),
                    serde_json::to_value(metrics::report(&replayed, world.dt)?)?,
                );
            }
            let report = serde_json::json!({
                "logged_ego": cfg.run.ego_controller.as_str(),
                "logged": original,
                "replayed": per,
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Cmd::Oracle {
            dim,
            cases,
            seed,
            band,
        } => {
            let fp = bandgen::FeasibilityParams::default();
            let mut rng = rand_chacha_rng(seed);
            match dim {
                Dim::D1 => {
                    let (s, _) = campaign_1d(&mut rng, &fp, cases, band);
                    println!("{}", serde_json::to_string_pretty(&s)?);
                    println!(
                        "agreement: {:.2}%  unsound: {}",
                        100.0 * s.agreement_rate(),
                        s.unsound
                    );
                }
                Dim::D2 => {
                    let bounds = EgoBounds::from_params(&fp, 2.0);
                    let ec = EscapeConfig::default();
                    let all: Vec<_> = (0..cases)
                        .map(|_| {
                            let (e, a) = sample_state_2d(&mut rng);
                            score_case_2d(e, a, &fp, &bounds, &ec)
                        })
                        .collect();
                    let s = summarize_2d(&all, band);
                    println!("{}", serde_json::to_string_pretty(&s)?);
                    let agree = s.confirmed as f64 / s.predicted_unavoidable.max(1) as f64;
                    println!(
                        "agreement: {:.2}%  counterexamples: {}  unknown: {:.2}%",
                        100.0 * agree,
                        s.counterexamples,
                        100.0 * s.unknown_rate()
                    );
                }
            }
            Ok(())
        }
        Cmd::Metrics { logs, grid, dt } => {
            let (logs, cfg, _) = load_logs(&logs, None)?;
            let dt = if cfg != Config::default() {
                cfg.world()?.dt
            } else {
                dt
            };
            let r = metrics::report(&logs, dt)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
            if let Some(path) = grid {
                let thr: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
                let g = metrics::coverage_grid(&metrics::frame_pairs(&logs), &thr, &thr);
                let mut f = std::fs::File::create(&path)
                    .with_context(|| format!("creating {}", path.display()))?;
                let head: Vec<String> = thr.iter().map(|t| t.to_string()).collect();
                writeln!(f, "phi\\sigma,{}", head.join(","))?;
                for (t, row) in thr.iter().zip(&g) {
                    let r: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                    writeln!(f, "{t},{}", r.join(","))?;
                }
                println!("coverage grid -> {}", path.display());
            }
            Ok(())
        }
        Cmd::Schedule { config } => {
            let cfg = load_config(config.as_deref())?;
            for (i, e) in cfg.schedule.levels().iter().enumerate() {
                println!("level {}: eps = {e:.6}", i + 1);
            }
            println!("switch every {} episodes", cfg.schedule.switch_every);
            Ok(())
        }
        Cmd::Plot { input, out, kind } => {
            let text = std::fs::read_to_string(&input)
                .with_context(|| format!("reading {}", input.display()))?;
            let t = plot::Table::parse(&text)
                .map_err(|e| usage(format!("{}: {e}", input.display())))?;
            let svg = match kind {
                PlotKind::Curves => plot::curves(
                    &t,
                    "iteration",
                    &["collision_rate", "policy_loss", "value_loss", "entropy"],
                )?,
                PlotKind::Invalid => plot::grouped_bars(&t, "level", "invalid_rate")?,
                PlotKind::Coverage => plot::heatmap(&t)?,
            };
            std::fs::write(&out, svg).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn rand_chacha_rng(seed: u64) -> impl rand::Rng {
    bandgen::train::stream_rng(seed, 0)
}

/// Logs plus the config and trained risk critic when `path` is a run directory.
fn load_logs(
    path: &Path,
    config: Option<&Path>,
) -> Result<(Vec<EpisodeLog>, Config, Option<RiskCritic>)> {
    if path.is_dir() {
        let dir = RunDir::new(path);
        let cfg = match config {
            Some(c) => Config::load(c)?,
            None => Config::load(dir.config())?,
        };
        let logs = read_logs(dir.episodes())?;
        let critic = if dir.final_checkpoint().exists() {
            let ck = Checkpoint::load(dir.final_checkpoint())?;
            Some(Trainer::from_checkpoint(cfg.clone(), &ck)?.critic)
        } else {
            None
        };
        return Ok((logs, cfg, critic));
    }
    if !path.exists() {
        bail!(bandgen::Error::Input(format!(
            "{} does not exist",
            path.display()
        )));
    }
    let cfg = load_config(config)?;
    Ok((read_logs(path)?, cfg, None))
}
