//! `mcbandit` experiment runner.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mcbandit::harness::Combiner;

use config::{load_config, ConfigError, Experiment, ExperimentConfig};

#[derive(Parser, Debug)]
#[command(
    name = "mcbandit",
    version,
    about = "Bandit allocation among Monte Carlo estimators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an experiment and write its report, traces and metadata.
    Run(RunArgs),
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    /// Experiment family; overrides the config file.
    #[arg(long, value_enum)]
    experiment: Option<Experiment>,
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated methods: ucb1, ucbv, klucb, ts, uniform, pmc, fixed-<arm>.
    #[arg(long, value_delimiter = ',')]
    policies: Option<Vec<String>>,
    /// Draw budget.
    #[arg(long)]
    n: Option<u64>,
    /// Time budget for cost-aware runs.
    #[arg(long)]
    budget: Option<f64>,
    #[arg(long)]
    replicates: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    workers: Option<usize>,
    /// Caplet strike (0.06, 0.07 or 0.08).
    #[arg(long)]
    strike: Option<f64>,
    #[arg(long, value_enum)]
    combiner: Option<CombinerArg>,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum CombinerArg {
    Uniform,
    Weighted,
    Both,
}

impl From<CombinerArg> for Combiner {
    fn from(c: CombinerArg) -> Self {
        match c {
            CombinerArg::Uniform => Combiner::Uniform,
            CombinerArg::Weighted => Combiner::Weighted,
            CombinerArg::Both => Combiner::Both,
        }
    }
}

enum Failure {
    Config(ConfigError),
    Runtime(anyhow::Error),
}

fn resolve(args: RunArgs) -> Result<(ExperimentConfig, Option<(PathBuf, String)>), ConfigError> {
    let (mut cfg, source) = match &args.config {
        Some(path) => {
            let (mut cfg, src) = load_config(path)?;
            if let Some(e) = args.experiment {
                cfg.experiment = e;
            }
            (cfg, Some((path.clone(), src)))
        }
        None => match args.experiment {
            Some(e) => (ExperimentConfig::new(e), None),
            None => return Err(ConfigError::new("either --experiment or --config is required")),
        },
    };
    if let Some(p) = args.policies {
        cfg.policies = Some(p);
    }
    if args.n.is_some() {
        cfg.n = args.n;
    }
    if args.budget.is_some() {
        cfg.budget = args.budget;
    }
    if args.replicates.is_some() {
        cfg.replicates = args.replicates;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = args.out {
        cfg.out = o;
    }
    if args.workers.is_some() {
        cfg.workers = args.workers;
    }
    if let Some(k) = args.strike {
        cfg.cir.strike = k;
    }
    if let Some(c) = args.combiner {
        cfg.combiner = c.into();
    }
    Ok((cfg, source))
}

fn execute(args: RunArgs) -> Result<(), Failure> {
    let (cfg, source) = resolve(args).map_err(Failure::Config)?;
    let anchor = |e: ConfigError| match &source {
        Some((path, src)) => e.in_file(path, src),
        None => e,
    };
    let plan = run::Plan::new(cfg).map_err(|e| Failure::Config(anchor(e)))?;
    plan.execute().map_err(Failure::Runtime)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Command::Run(args) = cli.command;
    match execute(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
