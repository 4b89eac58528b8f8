//! `autopar` — command-line front end for the parallelization advisor.
//!
//! One subcommand per workflow step: `advise` runs the whole analysis and
//! writes an advice file, `explain` shows how one conjunction was costed,
//! `simulate` replays a chosen partition on the simulated runtime,
//! `validate` checks input files or runs the built-in oracle suite, and
//! `gen-fixture` writes example inputs.
//!
//! Exit codes: 0 success, 1 analysis-level findings (validation
//! diagnostics, failed oracle checks, conjunctions that cannot be
//! analyzed), 2 usage, I/O, or parse errors. Reports go to standard
//! output (`--format json` for machine-readable form), diagnostics to
//! standard error.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "autopar",
    version,
    about = "Profile-directed advisor for dependent AND-parallelism",
    subcommand_required = true,
    arg_required_else_help = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Analyze a program and profile and write parallelization advice
    Advise(AdviseArgs),
    /// Show one conjunction's timeline, partition costs, and advice
    Explain(ExplainArgs),
    /// Run the spark/future runtime simulator on one conjunction
    Simulate(SimulateArgs),
    /// Validate input files, or run the built-in oracle checks
    Validate(ValidateArgs),
    /// Write a named example program and profile pair
    GenFixture(GenFixtureArgs),
}

/// The program + profile pair every analysis command reads.
#[derive(Args)]
pub struct InputArgs {
    /// Program file (JSON)
    #[arg(long, value_name = "FILE")]
    pub program: PathBuf,
    /// Profile file (JSON)
    #[arg(long, value_name = "FILE")]
    pub profile: PathBuf,
}

/// Tuning knobs shared by the analysis commands. Flags win over the
/// config file; the config file is read only when `--config` names it.
#[derive(Args)]
pub struct ConfigArgs {
    /// Analysis configuration file (JSON)
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Overhead parameters file (JSON); overrides the config's overheads
    #[arg(long, value_name = "FILE")]
    pub overheads_file: Option<PathBuf>,
    /// Minimum mean cost for a conjunct to count as expensive
    #[arg(long, value_name = "COST")]
    pub expensive_threshold: Option<f64>,
    /// Minimum total call-site cost worth descending into
    #[arg(long, value_name = "COST")]
    pub call_cost_threshold: Option<f64>,
    /// Minimum predicted speedup for advice to be emitted
    #[arg(long, value_name = "RATIO")]
    pub speedup_threshold: Option<f64>,
    /// Partition evaluations before the search degrades to greedy
    #[arg(long, value_name = "N")]
    pub eval_budget: Option<u64>,
}

#[derive(Args)]
pub struct AdviseArgs {
    #[command(flatten)]
    pub inputs: InputArgs,
    /// Advice file to write
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Engines assumed available when sizing spawn throttles
    #[arg(long, value_name = "N")]
    pub engines: Option<u32>,
    /// Worker threads for the analysis (default: one per CPU)
    #[arg(long, value_name = "N")]
    pub jobs: Option<usize>,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
}

#[derive(Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub inputs: InputArgs,
    /// Conjunction to explain, as <proc>:<goal-id> (e.g. map_foldl/4-0:4)
    #[arg(long, value_name = "PROC:GOAL")]
    pub conjunction: String,
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Engines assumed available when sizing spawn throttles
    #[arg(long, value_name = "N")]
    pub engines: Option<u32>,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
}

#[derive(Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub inputs: InputArgs,
    /// Conjunction to simulate, as <proc>:<goal-id>
    #[arg(long, value_name = "PROC:GOAL")]
    pub conjunction: String,
    /// Parallel groups of 1-based conjunct indices, e.g. "1,2|3"
    #[arg(long, value_name = "GROUPS")]
    pub partition: String,
    /// Number of engines, or "unlimited"
    #[arg(long, value_name = "N", default_value = "unlimited", value_parser = parse_engines)]
    pub engines: EngineChoice,
    /// Print the full scheduling trace
    #[arg(long)]
    pub trace: bool,
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
}

#[derive(Args)]
pub struct ValidateArgs {
    /// Program file to validate (with --profile); omit both to run the
    /// built-in oracle checks instead
    #[arg(long, value_name = "FILE", requires = "profile")]
    pub program: Option<PathBuf>,
    /// Profile file to validate (with --program)
    #[arg(long, value_name = "FILE", requires = "program")]
    pub profile: Option<PathBuf>,
    /// Base seed for the randomized oracle checks
    #[arg(long, value_name = "N", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
}

#[derive(Args)]
pub struct GenFixtureArgs {
    /// Which example to write
    #[arg(long, value_enum, value_name = "NAME")]
    pub template: Template,
    /// Seed for the random template
    #[arg(long, value_name = "N", default_value_t = 0)]
    pub seed: u64,
    /// Program file to write
    #[arg(long, value_name = "FILE")]
    pub program: PathBuf,
    /// Profile file to write
    #[arg(long, value_name = "FILE")]
    pub profile: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Template {
    Fig1Left,
    Fig1Right,
    MapFoldl,
    Random,
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum EngineChoice {
    Unlimited,
    Fixed(usize),
}

fn parse_engines(s: &str) -> Result<EngineChoice, String> {
    if s == "unlimited" {
        return Ok(EngineChoice::Unlimited);
    }
    match s.parse::<usize>() {
        Ok(n) if n >= 1 => Ok(EngineChoice::Fixed(n)),
        Ok(_) => Err("engine count must be at least 1".to_string()),
        Err(_) => Err(format!("expected a positive integer or \"unlimited\", got {s:?}")),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version arrive here too; they are not errors.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(commands::Outcome::Clean) => ExitCode::SUCCESS,
        Ok(commands::Outcome::Findings) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
