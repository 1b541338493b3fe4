use std::path::PathBuf;
use std::process::ExitCode;

use adiabatic_chain::harness::{cmd_adiabatic, cmd_build, cmd_check, exit_code, load_config};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(version, about = "Extensive adiabatic invariants of the Klein-Gordon chain")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the normal form and write its seeds.
    Build(Common),
    /// Run the invariant suite; exits 1 if any check fails.
    Check(Common),
    /// Run the adiabatic-invariance experiment.
    Adiabatic(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `exp.out`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (Command::Build(c) | Command::Check(c) | Command::Adiabatic(c)) = &cli.cmd;
    let cfg = match load_config(&c.config, c.seed, c.threads) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e) as u8);
        }
    };
    let out = c.out.clone().unwrap_or_else(|| cfg.out.clone());
    let run = match &cli.cmd {
        Command::Build(_) => cmd_build(&cfg, &out).map(|s| {
            for o in &s.orders {
                println!(
                    "order {}: residual {:.2e}, chi terms {}, phi terms {}",
                    o.s, o.homological_residual, o.chi_terms, o.phi_terms
                );
            }
            true
        }),
        Command::Check(_) => cmd_check(&cfg, &out).map(|rep| {
            print!("{}", rep.table());
            rep.all_passed()
        }),
        Command::Adiabatic(_) => cmd_adiabatic(&cfg, &out).map(|s| {
            for c in &s.cells {
                println!(
                    "beta {:>8} r {} median ratio {:.3e} [{:.3e}, {:.3e}] excluded {}",
                    c.beta, c.r, c.median_ratio, c.median_ci[0], c.median_ci[1], c.excluded
                );
            }
            true
        }),
    };
    match run {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
