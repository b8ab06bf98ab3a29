use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hypodecay_cli::{run_scenario, write_outputs, CliError, ScenarioConfig, ScenarioKind};

#[derive(Parser)]
#[command(name = "hypodecay", version, about = "Decay and hypercontractivity experiments for linear Fokker-Planck equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the structural conditions on (D, C).
    Validate(RunArgs),
    /// Entropy decay of the configured initial data.
    Decay(RunArgs),
    /// Decay of Hermite data supported on a higher invariant subspace.
    Subspace(RunArgs),
    /// Waiting time and e2 bound for data with only finite e_p.
    Hyper(RunArgs),
    /// Decay of the relative Fisher information.
    Fisher(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for the CSV series and JSON report.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress the summary on stdout.
    #[arg(long)]
    quiet: bool,
}

fn run(kind: ScenarioKind, args: &RunArgs) -> Result<bool, CliError> {
    let mut cfg = ScenarioConfig::from_path(&args.config, Some(kind))?;
    if let Some(seed) = args.seed {
        cfg = cfg.with_seed(seed);
    }
    let outcome = run_scenario(&cfg)?;
    let (csv, report) = write_outputs(&outcome, &cfg, &args.out)?;
    if !args.quiet {
        for (name, ok) in &outcome.report.flags {
            println!("{:<24} {}", name, if *ok { "PASS" } else { "FAIL" });
        }
        if let (Some(r), Some(b)) = (&outcome.report.fitted_rate, &outcome.report.fitted_poly_order) {
            println!("fitted rate {:.4} [{:.4}, {:.4}]", r.value, r.ci_low, r.ci_high);
            println!("fitted poly order {:.4} [{:.4}, {:.4}]", b.value, b.ci_low, b.ci_high);
        }
        println!("series: {}", csv.display());
        println!("report: {}", report.display());
    }
    Ok(outcome.report.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::Validate(a) => (ScenarioKind::Validate, a),
        Command::Decay(a) => (ScenarioKind::Decay, a),
        Command::Subspace(a) => (ScenarioKind::Subspace, a),
        Command::Hyper(a) => (ScenarioKind::Hyper, a),
        Command::Fisher(a) => (ScenarioKind::Fisher, a),
    };
    match run(kind, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
