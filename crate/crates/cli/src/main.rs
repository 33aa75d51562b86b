//! Command-line front end for the edge unlearning simulator.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use edge_unlearn::VariantTag;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_GOLDEN: u8 = 3;
pub const EXIT_INVARIANT: u8 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "edge-unlearn",
    version,
    about = "Exact machine-unlearning simulator for memory-constrained edge devices",
    after_help = "Environment:\n  UNLEARN_SEED     overrides the scenario seed (same as --seed)\n  UNLEARN_OUT_DIR  overrides the output directory (same as --out)\n\n\
Exit codes:\n  0  success\n  1  other failure (I/O, engine error)\n  2  configuration error\n  3  golden-trace mismatch\n  4  engine invariant violation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct ScenarioArgs {
    /// Scenario file (TOML). Built-in defaults when omitted.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, env = "UNLEARN_SEED")]
    pub seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(short, long, env = "UNLEARN_OUT_DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SweepParam {
    /// Per-user unlearning probability.
    Rho,
    /// Store capacity in slots.
    Capacity,
    /// Initial shard count.
    Shards,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a single variant and write its metrics, events and assignments.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Variant to run; defaults to the first configured variant.
        #[arg(long)]
        variant: Option<VariantTag>,
    },
    /// Run every configured variant on one shared workload.
    Compare {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Replay a workload file instead of generating one.
        #[arg(long)]
        workload: Option<PathBuf>,
    },
    /// Print the checkpoint replacement trace of one variant as JSON lines.
    Trace {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        variant: Option<VariantTag>,
    },
    /// Sweep one parameter and write total RSN and energy per variant.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Write the generated workload as JSON lines.
    Workload {
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Check the FiboR replacement policy against the golden 8-slot trace.
    VerifyFigure8,
    /// Print the built-in default scenario file.
    DefaultConfig,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scenario, variant } => commands::run(&scenario, variant),
        Command::Compare { scenario, workload } => commands::compare(&scenario, workload.as_deref()),
        Command::Trace { scenario, variant } => commands::trace(&scenario, variant),
        Command::Sweep {
            scenario,
            param,
            values,
        } => commands::sweep(&scenario, param, &values),
        Command::Workload { scenario } => commands::workload(&scenario),
        Command::VerifyFigure8 => commands::verify_figure8(),
        Command::DefaultConfig => {
            print!("{}", edge_unlearn::ScenarioConfig::default().to_toml());
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(commands::exit_code(&err))
        }
    }
}
