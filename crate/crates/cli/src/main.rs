//! `stackfed` command-line runner.
//!
//! ```text
//! stackfed run --config exp.toml --strategy aswm --seed 3 --rounds 30 --reps 10 --out results/
//! stackfed compare --config exp.toml --strategies fedavg,dswm,aswm
//! stackfed run --config exp.toml --set noise_sigma=0.1 --set hidden_layers=[32]
//! ```
//!
//! Worker threads come from `STACKFED_THREADS` (default 1).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use stackfed::harness::{self, ExperimentConfig, OutputFormat, ResultTable};
use stackfed::strategies::StrategyKind;

#[derive(Parser, Debug)]
#[command(name = "stackfed", version, about = "Federated contribution-weighting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one strategy for the configured number of repetitions.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        strategy: Option<StrategyKind>,
    },
    /// Run several strategies on identical data and report deltas against FedAvg.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated strategy list, e.g. `fedavg,dswm,aswm`.
        #[arg(long, value_delimiter = ',', required = true)]
        strategies: Vec<StrategyKind>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// TOML config file; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write `results.json`.
    #[arg(long)]
    json: bool,
    /// Override any config key, e.g. `--set lr=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)
                .with_context(|| format!("loading {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        for item in &self.overrides {
            let Some((key, value)) = item.split_once('=') else {
                bail!("--set expects KEY=VALUE, got '{item}'");
            };
            cfg.set(key.trim(), value.trim())
                .with_context(|| format!("--set {item}"))?;
        }
        if let Some(seed) = self.seed {
            cfg.base_seed = seed;
        }
        if let Some(rounds) = self.rounds {
            cfg.rounds = rounds;
        }
        if let Some(reps) = self.reps {
            cfg.reps = reps;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write(table: &ResultTable, dir: &Path, json: bool) -> anyhow::Result<()> {
    let mut files = harness::emit_results(table, OutputFormat::Csv, dir)?;
    if json {
        files.extend(harness::emit_results(table, OutputFormat::Json, dir)?);
    }
    for f in files {
        log::info!("wrote {}", f.display());
    }
    Ok(())
}

fn print_summary(table: &ResultTable) {
    println!(
        "{:<9} {:>4} {:<8} {:>9} {:>8} {:>9} {:>9}",
        "strategy", "node", "role", "mean_auc", "std_auc", "mean_loss", "delta_%"
    );
    for r in &table.summary {
        let delta = r
            .delta_vs_fedavg_pct
            .map_or_else(|| "-".to_string(), |d| format!("{d:+.3}"));
        println!(
            "{:<9} {:>4} {:<8} {:>9.4} {:>8.4} {:>9.4} {:>9}",
            r.strategy.as_str(),
            r.node_id,
            r.role.as_str(),
            r.mean_auc,
            r.std_auc,
            r.mean_loss,
            delta
        );
    }
    for f in &table.failures {
        eprintln!("failed: {} rep {}: {}", f.strategy, f.rep, f.error);
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let (table, common) = match &cli.command {
        Command::Run { common, strategy } => {
            let mut cfg = common.load()?;
            if let Some(s) = strategy {
                cfg.strategy = *s;
            }
            (harness::run_experiment(&cfg)?, (common, cfg))
        }
        Command::Compare { common, strategies } => {
            let cfg = common.load()?;
            (harness::compare_strategies(&cfg, strategies)?, (common, cfg))
        }
    };
    let (common, cfg) = common;
    write(&table, &cfg.out_dir, common.json)?;
    print_summary(&table);
    Ok(table.is_success())
}
