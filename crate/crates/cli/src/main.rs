//! `ergogame`: solve, verify and simulate risk-sensitive ergodic games.
//!
//! Exit codes: 0 success, 1 input error, 2 non-convergence, 3 certificate
//! failure, 4 simulation refusal.

mod artifacts;
mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use ergogame::simulate::{CostMode, ExitMode};

use crate::config::RunConfig;
use crate::error::CliError;

const THREADS_ENV: &str = "ERGOGAME_THREADS";

#[derive(Debug, Parser)]
#[command(name = "ergogame", version, about = "Risk-sensitive ergodic zero-sum games on countable-state CTMCs")]
struct Cli {
    /// Worker threads (falls back to the config, then ERGOGAME_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the truncation ladder and extract the selector pair.
    Solve(Common),
    /// Re-check a solution: residual, bounds, evaluation, deviations.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Directory holding psi.json and selectors.json (default: --out).
        #[arg(long)]
        solution: Option<PathBuf>,
        /// Also run the Monte Carlo cross-check (needs --seed).
        #[arg(long)]
        mc: bool,
        /// Skip the deviation sweep.
        #[arg(long)]
        no_deviations: bool,
    },
    /// Estimate the risk-sensitive cost of a stationary pair.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Model utilities.
    #[command(subcommand)]
    Model(ModelCommand),
}

#[derive(Debug, Subcommand)]
enum ModelCommand {
    /// Validate the model and its Lyapunov data.
    Check(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model file (JSON).
    #[arg(long, conflicts_with = "builtin")]
    model: Option<PathBuf>,
    /// Built-in model name.
    #[arg(long, value_parser = ["birth-death"])]
    builtin: Option<String>,
    /// Ladder radii around the reference state, e.g. 25,50,100,200.
    #[arg(long, value_delimiter = ',')]
    radii: Option<Vec<usize>>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    tol_eigen: Option<f64>,
    #[arg(long)]
    tol_ladder: Option<f64>,
    #[arg(long)]
    tol_dirichlet: Option<f64>,
    #[arg(long)]
    tol_dev: Option<f64>,
    /// Simulation horizon T.
    #[arg(long)]
    horizon: Option<f64>,
    /// Number of simulated trajectories N.
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimArgs {
    /// selectors.json to simulate (default: <out>/selectors.json).
    #[arg(long)]
    strategies: Option<PathBuf>,
    /// Reference value for the z-score; policy evaluation is used otherwise.
    #[arg(long)]
    rho: Option<f64>,
    /// Start state (default: the model's reference state).
    #[arg(long)]
    start: Option<usize>,
    /// Extra horizons for the 1/T extrapolation report.
    #[arg(long, value_delimiter = ',')]
    horizons: Option<Vec<f64>>,
    /// Dump this many trajectories as CSV.
    #[arg(long)]
    trajectories: Option<usize>,
    #[arg(long, value_enum)]
    cost_mode: Option<CostModeArg>,
    #[arg(long, value_enum)]
    exit_mode: Option<ExitModeArg>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum CostModeArg {
    Expected,
    Realized,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum ExitModeArg {
    Kill,
    Absorb,
}

impl Common {
    /// Defaults, then the config file, then these flags.
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(p) = &self.model {
            c.model.path = Some(p.clone());
            c.model.builtin = None;
        }
        if let Some(b) = &self.builtin {
            c.model.builtin = Some(b.clone());
            c.model.path = None;
        }
        if let Some(r) = &self.radii {
            c.ladder.radii = r.clone();
        }
        set(&mut c.ladder.delta, self.delta);
        set(&mut c.ladder.tol_ladder, self.tol_ladder);
        set(&mut c.tolerances.eigen, self.tol_eigen);
        if self.tol_dirichlet.is_some() {
            c.tolerances.dirichlet = self.tol_dirichlet;
        }
        set(&mut c.tolerances.deviation, self.tol_dev);
        set(&mut c.simulation.horizon, self.horizon);
        set(&mut c.simulation.paths, self.paths);
        if self.seed.is_some() {
            c.simulation.seed = self.seed;
        }
        if let Some(o) = &self.out {
            c.out = o.clone();
        }
        Ok(c)
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn thread_count(flag: Option<usize>, config: Option<usize>) -> Result<Option<usize>, CliError> {
    if let Some(n) = flag.or(config) {
        return Ok(Some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| CliError::Input(format!("{THREADS_ENV}={s:?} is not a positive integer"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let started = Instant::now();
    let started_unix_ms = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0);
    let (name, common) = match &cli.command {
        Command::Solve(c) => ("solve", c),
        Command::Verify { common, .. } => ("verify", common),
        Command::Simulate { common, .. } => ("simulate", common),
        Command::Model(ModelCommand::Check(c)) => ("model check", c),
    };
    let mut cfg = common.resolve()?;
    if cli.threads == Some(0) {
        return Err(CliError::Input("--threads must be at least 1".into()));
    }
    cfg.threads = thread_count(cli.threads, cfg.threads)?;
    if let Command::Simulate { sim, .. } = &cli.command {
        if let Some(h) = &sim.horizons {
            cfg.simulation.horizons = h.clone();
        }
        set(&mut cfg.simulation.start, sim.start.map(Some));
        set(&mut cfg.simulation.dump, sim.trajectories);
        if let Some(m) = sim.cost_mode {
            cfg.simulation.cost_mode = match m {
                CostModeArg::Expected => CostMode::Expected,
                CostModeArg::Realized => CostMode::Realized,
            };
        }
        if let Some(m) = sim.exit_mode {
            cfg.simulation.exit_mode = match m {
                ExitModeArg::Kill => ExitMode::Kill,
                ExitModeArg::Absorb => ExitMode::Absorb,
            };
        }
    }
    if let Command::Verify { mc, no_deviations, .. } = &cli.command {
        cfg.verify.mc |= *mc;
        if *no_deviations {
            cfg.verify.deviations = false;
        }
    }
    cfg.check()?;
    cfg.size_builtin_store();
    if let Some(n) = cfg.threads {
        // a second build in the same process (tests) is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }

    let out = artifacts::ensure_dir(&cfg.out)?;
    artifacts::write_text(&out.join(artifacts::RESOLVED_CONFIG), &cfg.to_toml()?)?;
    let result = match &cli.command {
        Command::Solve(_) => commands::solve(&cfg),
        Command::Verify { solution, .. } => commands::verify(&cfg, solution.as_deref().unwrap_or(&out)),
        Command::Simulate { sim, .. } => {
            let path = sim.strategies.clone().unwrap_or_else(|| out.join(artifacts::SELECTORS));
            commands::simulate(&cfg, &path, sim.rho)
        }
        Command::Model(ModelCommand::Check(_)) => commands::model_check(&cfg),
    };
    let meta = artifacts::RunMeta {
        command: name.to_string(),
        version: env!("CARGO_PKG_VERSION"),
        started_unix_ms,
        wall_seconds: started.elapsed().as_secs_f64(),
        threads: rayon::current_num_threads(),
    };
    artifacts::write_json(&out.join(artifacts::RUN_META), &meta)?;
    result
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
