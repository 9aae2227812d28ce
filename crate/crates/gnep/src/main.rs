use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gnep::commands::{self, Overrides};
use gnep::scenario::{parse_grid, RuleChoice};
use gnep::CliError;

/// Generalized Nash equilibria with shared constraints: solves, factor
/// sweeps, bi-level selection and the two-car racing study.
#[derive(Debug, Parser)]
#[command(name = "gnep", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Debug, Args)]
struct Flags {
    /// Factor parameters, comma separated (the ego factor for race and mc).
    #[arg(long, global = true, value_delimiter = ',', allow_negative_numbers = true)]
    alpha: Option<Vec<f64>>,
    /// Factor normalization: first-identity, sum-to-one or normalized.
    #[arg(long, global = true, value_parser = parse_rule)]
    rule: Option<RuleChoice>,
    /// Sweep grid as lo:hi:step, end included.
    #[arg(long, global = true, value_parser = parse_grid)]
    grid: Option<(f64, f64, f64)>,
    /// Monte Carlo run count.
    #[arg(long, global = true)]
    runs: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; documents go to stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for mc runs and the selection grid.
    #[arg(long, global = true)]
    parallel: Option<usize>,
    /// Solver tolerance on the Fischer–Burmeister residual.
    #[arg(long, global = true)]
    tol: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the scenario's game for the given factors.
    Solve { scenario: PathBuf },
    /// Trace equilibria over a one-parameter factor family.
    Sweep { scenario: PathBuf },
    /// Choose factors minimizing the scenario's upper-level objective.
    Select { scenario: PathBuf },
    /// One closed-loop race.
    Race { scenario: PathBuf },
    /// Paired Monte Carlo study of two ego strategies.
    Mc { scenario: PathBuf },
    /// Closed-form reference equilibria: example1, three_car or harker.
    Oracle { game: String },
}

fn parse_rule(s: &str) -> Result<RuleChoice, String> {
    RuleChoice::parse(s).ok_or_else(|| format!("unknown rule `{s}` (expected first-identity, sum-to-one or normalized)"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GNEP_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let f = cli.flags;
    let ov = Overrides {
        alpha: f.alpha,
        rule: f.rule,
        grid: f.grid,
        runs: f.runs,
        seed: f.seed,
        out: f.out,
        parallel: f.parallel,
        tol: f.tol,
    };
    let result = match &cli.command {
        Command::Solve { scenario } => commands::cmd_solve(scenario, &ov),
        Command::Sweep { scenario } => commands::cmd_sweep(scenario, &ov),
        Command::Select { scenario } => commands::cmd_select(scenario, &ov),
        Command::Race { scenario } => commands::cmd_race(scenario, &ov),
        Command::Mc { scenario } => commands::cmd_mc(scenario, &ov),
        Command::Oracle { game } => commands::cmd_oracle(game, &ov),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            report_kind(&e);
            ExitCode::from(e.exit_code())
        }
    }
}

fn report_kind(e: &CliError) {
    if let CliError::Numerical(_) = e {
        log::warn!("numerical failure; partial outputs may have been written");
    }
}
