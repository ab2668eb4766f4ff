use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wifisched::harness::{run_pipeline, run_stage, ExperimentConfig, Outcome, Policy, RunDir, Stage};

#[derive(Parser)]
#[command(name = "wifisched", version, about = "Learned EDCA scheduling: data collection, training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Policies for train-online and evaluate (reinwifi, edca, rate_only).
    #[arg(long, global = true, value_delimiter = ',')]
    policy: Vec<Policy>,
    /// Scenarios for train-online and evaluate: a built-in id 1-11 or a
    /// scenario TOML path.
    #[arg(long, global = true, value_delimiter = ',')]
    scenario: Vec<String>,
    /// Subtract the UCB exploration bonus instead of adding it.
    #[arg(long, global = true)]
    optimistic_ucb: bool,
    /// Log level (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log: String,
}

#[derive(Subcommand)]
enum Command {
    /// Record preliminary periods into dataset.jsonl.
    Collect,
    /// Fit the region model of each traffic pattern.
    Quantize,
    /// Train one imitator per pattern and region.
    TrainImitators,
    /// Train the reinwifi and rate_only Q-networks against the imitators.
    TrainOffline,
    /// Fine-tune offline checkpoints on live scenarios.
    TrainOnline,
    /// Run policies greedily and write eval/metrics.csv and eval/summary.csv.
    Evaluate,
    /// Run every stage in order, skipping stages whose inputs are unchanged.
    Pipeline {
        /// Rerun stages even when they are up to date.
        #[arg(long)]
        force: bool,
    },
}

fn load_config(c: &Common) -> wifisched::Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &c.out {
        cfg.out = std::env::current_dir().map(|d| d.join(out)).unwrap_or_else(|_| out.clone());
    }
    if !c.policy.is_empty() {
        cfg.evaluation.policies = c.policy.clone();
        cfg.online.policies = c.policy.iter().copied().filter(|p| p.is_learned()).collect();
    }
    if !c.scenario.is_empty() {
        cfg.evaluation.scenarios = c.scenario.clone();
        cfg.online.scenarios = c.scenario.clone();
    }
    if c.optimistic_ucb {
        cfg.offline.hyper.optimistic = true;
        cfg.online.hyper.optimistic = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> wifisched::Result<()> {
    let cfg = load_config(&cli.common)?;
    let stage = match cli.command {
        Command::Collect => Stage::Collect,
        Command::Quantize => Stage::Quantize,
        Command::TrainImitators => Stage::TrainImitators,
        Command::TrainOffline => Stage::TrainOffline,
        Command::TrainOnline => Stage::TrainOnline,
        Command::Evaluate => Stage::Evaluate,
        Command::Pipeline { force } => {
            for (stage, outcome) in run_pipeline(&cfg, force)? {
                println!("{stage}: {}", if outcome == Outcome::Ran { "ran" } else { "up to date" });
            }
            return Ok(());
        }
    };
    run_stage(&cfg, &RunDir::new(cfg.out_dir()), stage, true)?;
    println!("{stage}: done ({})", cfg.out_dir().display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.common.log).format_timestamp_secs().init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
