use std::path::PathBuf;
use std::process::ExitCode;

use bubble_reduction_cli::{run, CliError, RunConfig};
use clap::{Parser, ValueEnum};

/// Numerical checks of the multi-bubble reduction.
#[derive(Debug, Parser)]
#[command(name = "bubble-reduction", version)]
struct Cli {
    /// Command to run.
    command: Command,
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` from the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed; overrides `seed` from the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Grid refinement level; overrides `refinement` from the configuration.
    #[arg(long)]
    refinement: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Constants,
    ResidualScan,
    CriticalPoint,
    EnergyCompare,
    KwCheck,
    Correct,
    LemmaCheck,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Constants => "constants",
            Command::ResidualScan => "residual-scan",
            Command::CriticalPoint => "critical-point",
            Command::EnergyCompare => "energy-compare",
            Command::KwCheck => "kw-check",
            Command::Correct => "correct",
            Command::LemmaCheck => "lemma-check",
        }
    }
}

fn execute(cli: &Cli) -> Result<bool, CliError> {
    let mut config = RunConfig::load(&cli.config)?;
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(refinement) = cli.refinement {
        config.refinement = refinement;
    }
    let (report, timing) = run(cli.command.name(), &config)?;
    report.write(&timing, &config.output_dir)?;
    for verdict in &report.verdicts {
        let status = if verdict.passed { "PASS" } else { "FAIL" };
        println!("{status} {}: {}", verdict.name, verdict.detail);
    }
    println!("wrote {}", config.output_dir.display());
    Ok(report.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
