mod artifacts;
mod config;
mod stages;

use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use config::{Overrides, RunConfig};

/// Batch pipeline: ingest trade logs, price tokens, detect and attribute arbitrage.
#[derive(Debug, Parser)]
#[command(name = "arbscan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Normalize the event log and assemble markets from descriptors.
    Ingest,
    /// Assign a topic to every market.
    Topics,
    /// Enumerate candidate pairs within (topic, end date) groups.
    Pairs,
    /// Ask the oracle about each candidate pair and certify dependent ones.
    Discover,
    /// Build per-token VWAP series and outstanding supply.
    Prices,
    /// Scan prices for rebalancing and combinatorial opportunities.
    Detect,
    /// Attribute realized arbitrage profit to accounts.
    Attribute,
    /// Summarize prior outputs, including the liquidity-concentration diagnostic.
    Report,
    /// Generate a deterministic synthetic log with planted episodes.
    Synth {
        /// Use the built-in five-episode fixture instead of the configured generator.
        #[arg(long)]
        planted: bool,
    },
}

fn run(cli: Cli) -> Result<stages::Outcome> {
    let env = |k: &str| std::env::var(k).ok();
    let cfg = RunConfig::load(&cli.overrides, env)?;
    match cli.command {
        Command::Ingest => stages::ingest(&cfg, &env),
        Command::Topics => stages::topics(&cfg, &env),
        Command::Pairs => stages::pairs(&cfg, &env),
        Command::Discover => stages::discover(&cfg, &env),
        Command::Prices => stages::prices(&cfg, &env),
        Command::Detect => stages::detect(&cfg, &env),
        Command::Attribute => stages::attribute_stage(&cfg, &env),
        Command::Report => stages::report(&cfg, &env),
        Command::Synth { planted } => stages::synth(&cfg, &env, planted),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            if outcome.partial {
                eprintln!("warning: partial results written; see the failure ledger");
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
