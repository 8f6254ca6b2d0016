use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser};

use plap_cli::{execute, resolve_out_dir, validate_file, CliError, Subcommand, OUT_ENV};

#[derive(Parser)]
#[command(name = "plap", version, about = "Experiments for the stochastic p-Laplace equation")]
enum Cli {
    /// Resolvent and operator checks on random fields
    StepCheck(RunArgs),
    /// Controlled skeleton solve with Picard and time-increment diagnostics
    Skeleton(RunArgs),
    /// Monte Carlo ensemble of the noisy equation
    Simulate(RunArgs),
    /// Controlled small-noise solutions against the skeleton
    LdpC1(RunArgs),
    /// Skeletons under oscillating control perturbations
    LdpC2(RunArgs),
    /// Penalised upper bound on the rate function
    LdpRate(RunArgs),
    /// Rare-event frequencies and normalised exponents
    RareEvent(RunArgs),
    /// Girsanov-coupling check of the transportation inequality
    Tci(RunArgs),
    /// Space-time refinement differences of the skeleton
    Refine(RunArgs),
    /// Check a config without running solvers
    Validate(ValidateArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration
    #[arg(long)]
    config: PathBuf,
    /// Output directory
    #[arg(long, env = OUT_ENV)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on this
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides the config seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ValidateArgs {
    /// TOML run configuration
    #[arg(long)]
    config: PathBuf,
    /// Check the blocks this subcommand needs
    #[arg(long = "for", value_enum)]
    target: Option<Subcommand>,
}

fn fail(err: &CliError, out: Option<&PathBuf>) -> ExitCode {
    let json = serde_json::to_string_pretty(&err.report()).unwrap_or_else(|_| err.to_string());
    eprintln!("{json}");
    if let Some(dir) = out {
        let _ = std::fs::create_dir_all(dir).and_then(|_| std::fs::write(dir.join("error.json"), format!("{json}\n")));
    }
    ExitCode::from(err.exit_code() as u8)
}

fn main() -> ExitCode {
    let (sub, args) = match Cli::parse() {
        Cli::Validate(v) => {
            return match validate_file(&v.config, v.target) {
                Ok(rep) => {
                    println!("{}", serde_json::to_string_pretty(&rep).expect("plain report"));
                    if rep.is_ok() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(2)
                    }
                }
                Err(e) => fail(&e, None),
            };
        }
        Cli::StepCheck(a) => (Subcommand::StepCheck, a),
        Cli::Skeleton(a) => (Subcommand::Skeleton, a),
        Cli::Simulate(a) => (Subcommand::Simulate, a),
        Cli::LdpC1(a) => (Subcommand::LdpC1, a),
        Cli::LdpC2(a) => (Subcommand::LdpC2, a),
        Cli::LdpRate(a) => (Subcommand::LdpRate, a),
        Cli::RareEvent(a) => (Subcommand::RareEvent, a),
        Cli::Tci(a) => (Subcommand::Tci, a),
        Cli::Refine(a) => (Subcommand::Refine, a),
    };
    let out = match resolve_out_dir(args.out) {
        Ok(o) => o,
        Err(e) => return fail(&e, None),
    };
    match execute(sub, &args.config, args.workers, args.seed).and_then(|art| art.write_to(&out).map(|_| art)) {
        Ok(art) => {
            for name in art.names() {
                println!("{}", out.join(name).display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e, Some(&out)),
    }
}
