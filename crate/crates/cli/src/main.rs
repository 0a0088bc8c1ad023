//! Command-line front end for the group-based policy-optimization toolkit.
//!
//! Exit codes: 0 success, 1 validation or usage failure, 2 numeric failure.

use clap::{Parser, Subcommand};

use policyopt_cli::commands::{self, CompareArgs, GatesArgs, GradcheckArgs, TrainArgs};

#[derive(Parser)]
#[command(
    name = "policyopt",
    version,
    about = "Group-based off-policy surrogate objectives on toy verifiable-reward tasks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a tabular policy from a JSON experiment config.
    Train(TrainArgs),
    /// Sample the gate-function curves onto a CSV grid.
    Gates(GatesArgs),
    /// Check analytic objective gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Run an objective-by-seed comparison matrix and summarize it.
    Compare(CompareArgs),
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match &cli.command {
        Command::Train(args) => commands::cmd_train(args),
        Command::Gates(args) => commands::cmd_gates(args),
        Command::Gradcheck(args) => commands::cmd_gradcheck(args),
        Command::Compare(args) => commands::cmd_compare(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
