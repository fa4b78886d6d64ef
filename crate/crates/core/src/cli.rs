//! The `tamp` command line: run experiments, dump visualization samples and
//! generate problems.

use crate::config::{self, ConfigError};
use crate::domains::{gen_problem, DomainKind, Horizon};
use crate::harness::{dump_viz, load_or_compute_guess, trial_seed, viz_file, ExperimentConfig, Mode, Runner, VizConfig};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

pub const EXIT_INVALID: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const OUT_ROOT_ENV: &str = "TAMP_OUT_ROOT";

#[derive(Parser, Debug)]
#[command(name = "tamp", version, about = "Lifelong TAMP sampler workbench")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run an experiment and write metrics under the run directory.
    Run(RunArgs),
    /// Train visualization models and write observed/learned sample files.
    Viz(VizArgs),
    /// Write generated problems as JSON lines.
    Gen(GenArgs),
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// TOML config; defaults apply to absent keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Training-set sizes (tasks per domain), comma separated.
    #[arg(long, value_delimiter = ',')]
    pub n_train: Vec<usize>,
    /// Run directory; defaults to `$TAMP_OUT_ROOT/<mode>-seed<seed>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overwrite a non-empty run directory.
    #[arg(long)]
    pub force: bool,
    /// Config override `key=value` (dotted keys for nested tables).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Random-guess tables to load, or compute and save when absent.
    #[arg(long)]
    pub guess_tables: Option<PathBuf>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Args, Debug)]
pub struct VizArgs {
    /// pushblock or lcontainer.
    #[arg(long)]
    pub kind: String,
    /// 1step or nstep; both when absent.
    #[arg(long)]
    pub horizon: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_data: Option<usize>,
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long)]
    pub domain: String,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn invalid(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_INVALID,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_RUNTIME,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::invalid(e.to_string())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub mode: Mode,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub trial_seeds: Vec<u64>,
    pub outputs: Vec<String>,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn out_root() -> PathBuf {
    std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

/// Refuses a non-empty existing directory unless `force`.
fn prepare_dir(dir: &Path, force: bool) -> Result<(), Failure> {
    let occupied = fs::read_dir(dir).map(|mut d| d.next().is_some()).unwrap_or(false);
    if occupied && !force {
        return Err(Failure::invalid(format!(
            "{} exists and is not empty (pass --force to overwrite)",
            dir.display()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Failure::runtime(format!("creating {}: {e}", dir.display())))
}

fn io(e: impl std::fmt::Display) -> Failure {
    Failure::runtime(e.to_string())
}

/// Resolves the experiment config from a file, flags and overrides.
pub fn resolve_config(args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let mut overrides = Vec::new();
    if let Some(m) = &args.mode {
        overrides.push(format!("mode=\"{m}\""));
    }
    if let Some(s) = args.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(t) = args.trials {
        overrides.push(format!("trials={t}"));
    }
    if !args.n_train.is_empty() {
        let list: Vec<String> = args.n_train.iter().map(|n| n.to_string()).collect();
        overrides.push(format!("n_train=[{}]", list.join(",")));
    }
    overrides.extend(args.set.iter().cloned());
    Ok(config::load(args.config.as_deref(), &overrides)?)
}

pub fn cmd_run(args: &RunArgs) -> Result<PathBuf, Failure> {
    let cfg = resolve_config(args)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| out_root().join(format!("{}-seed{}", cfg.mode.name(), cfg.seed)));
    prepare_dir(&out, args.force)?;
    let mut manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        mode: cfg.mode,
        config: cfg.clone(),
        seed: cfg.seed,
        trial_seeds: (0..cfg.trials).map(|t| trial_seed(cfg.seed, t)).collect(),
        outputs: match cfg.mode {
            Mode::Offline | Mode::Ablation => cfg
                .n_train
                .iter()
                .flat_map(|n| [format!("n_train_{n}/metrics.csv"), format!("n_train_{n}/aggregates.json")])
                .collect(),
            _ => vec!["metrics.csv".into(), "aggregates.json".into()],
        },
        started_unix: now(),
        finished_unix: None,
    };
    let write_manifest = |m: &RunManifest| {
        fs::write(out.join("manifest.json"), serde_json::to_string_pretty(m).expect("manifest serializes")).map_err(io)
    };
    write_manifest(&manifest)?;
    fs::write(out.join("config.toml"), config::to_toml(&cfg)).map_err(io)?;
    let guess_path = args.guess_tables.clone().unwrap_or_else(|| out.join("guess_tables.json"));
    let guess = load_or_compute_guess(&cfg, Some(&guess_path)).map_err(io)?;
    let mut runner = Runner::new(&cfg, guess);
    runner.out = Some(out.clone());
    runner.verbose = !args.quiet;
    runner.run().map_err(io)?;
    manifest.finished_unix = Some(now());
    write_manifest(&manifest)?;
    Ok(out)
}

pub fn cmd_viz(args: &VizArgs) -> Result<PathBuf, Failure> {
    let kind: DomainKind = args.kind.parse().map_err(|e: crate::domains::DomainError| Failure::invalid(e.to_string()))?;
    if kind.is_planning() {
        return Err(Failure::invalid(format!("{kind} is not a visualization domain")));
    }
    let horizons = match &args.horizon {
        Some(h) => vec![h.parse::<Horizon>().map_err(Failure::invalid)?],
        None => vec![Horizon::OneStep, Horizon::NStep],
    };
    let mut cfg = VizConfig::default();
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.n_data {
        cfg.n_data = n;
    }
    if let Some(n) = args.n_samples {
        cfg.n_samples = n;
    }
    if let Some(e) = args.epochs {
        cfg.diffusion.train.epochs = e;
    }
    if cfg.n_data == 0 || cfg.diffusion.train.epochs == 0 {
        return Err(Failure::invalid("n_data and epochs must be at least 1"));
    }
    let out = args.out.clone().unwrap_or_else(|| out_root().join(format!("viz-{kind}")));
    let existing = horizons
        .iter()
        .flat_map(|h| [viz_file(kind, *h, false), viz_file(kind, *h, true)])
        .find(|f| out.join(f).exists());
    if let (Some(f), false) = (existing, args.force) {
        return Err(Failure::invalid(format!(
            "{} exists (pass --force to overwrite)",
            out.join(f).display()
        )));
    }
    fs::create_dir_all(&out).map_err(io)?;
    dump_viz(kind, &horizons, &cfg, &out).map_err(io)?;
    Ok(out)
}

pub fn cmd_gen(args: &GenArgs) -> Result<(), Failure> {
    let kind: DomainKind = args.domain.parse().map_err(|e: crate::domains::DomainError| Failure::invalid(e.to_string()))?;
    if !kind.is_planning() {
        return Err(Failure::invalid(format!("{kind} has no planning problems")));
    }
    let mut text = String::new();
    for i in 0..args.count {
        let p = gen_problem(kind, args.seed.wrapping_add(i as u64)).map_err(io)?;
        text.push_str(&serde_json::to_string(&p).expect("problem serializes"));
        text.push('\n');
    }
    match &args.out {
        Some(path) => {
            if path.exists() && !args.force {
                return Err(Failure::invalid(format!(
                    "{} exists (pass --force to overwrite)",
                    path.display()
                )));
            }
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(io)?;
            }
            fs::write(path, text).map_err(io)
        }
        None => std::io::stdout().write_all(text.as_bytes()).map_err(io),
    }
}

/// Runs the parsed command, returning the process exit code.
pub fn execute(cli: &Cli) -> i32 {
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a).map(|out| println!("{}", out.display())),
        Command::Viz(a) => cmd_viz(a).map(|out| println!("{}", out.display())),
        Command::Gen(a) => cmd_gen(a),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
