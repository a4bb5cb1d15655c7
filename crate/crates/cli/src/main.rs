use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use gibbs_cli::{run, Command, Overrides};

#[derive(Parser, Debug)]
#[command(name = "gibbs", about = "Coupled thinning samplers for Gibbs point processes")]
struct Args {
    #[arg(value_enum)]
    command: Command,
    #[arg(long)]
    config: PathBuf,
    /// Decimal or 0x-prefixed hexadecimal.
    #[arg(long, value_parser = parse_seed)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the per-point decision log.
    #[arg(long)]
    trace: bool,
    /// Exit with status 3 when the subcommand's gate fails.
    #[arg(long)]
    gate: bool,
}

fn parse_seed(s: &str) -> Result<u64, String> {
    gibbs_core::prf::parse_seed(s).ok_or_else(|| format!("invalid seed {s:?}"))
}

fn main() -> ExitCode {
    let args = Args::parse();
    let ov = Overrides {
        seed: args.seed,
        reps: args.reps,
        threads: args.threads,
        out: args.out,
        trace: args.trace,
        gate: args.gate,
    };
    match run(args.command, &args.config, &ov) {
        Ok(outcome) => {
            for a in &outcome.artifacts {
                println!("{}", a.display());
            }
            if ov.gate && !outcome.gate_passed {
                eprintln!("gate failed for {}", args.command.name());
                return ExitCode::from(3);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
