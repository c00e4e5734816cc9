use clap::{Parser, Subcommand};
use splineperm_cli::{curve, simulate, test_cmd};

/// Penalized-spline mixed models with permutation likelihood-ratio tests.
#[derive(Parser)]
#[command(name = "splineperm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Permutation test of no association between s and the outcomes
    Test(test_cmd::TestArgs),
    /// Fitted curves of each outcome against s
    FitCurve(curve::CurveArgs),
    /// Simulation experiment from a TOML plan
    Simulate(simulate::SimulateArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Test(args) => test_cmd::run(args),
        Command::FitCurve(args) => curve::run(args),
        Command::Simulate(args) => simulate::run(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.code);
    }
}
