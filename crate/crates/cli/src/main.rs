use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, ValueEnum};
use shelab::run::{run, Command, Overrides, RunConfig};

/// Lattice stochastic heat equation experiments.
///
/// Exit status: 0 when the verdict passes, 2 when it fails, 1 on error.
#[derive(Debug, Parser)]
#[command(name = "shelab", version)]
struct Cli {
    #[arg(value_enum)]
    command: Cmd,

    /// TOML run configuration; every key is optional.
    config: Option<PathBuf>,

    #[arg(long)]
    seed: Option<u64>,

    #[arg(long)]
    replicas: Option<u64>,

    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    KernelCheck,
    Lclt,
    GreenBound,
    Simulate,
    Converge,
    CompareMoments,
    Lyapunov,
    Holder,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::KernelCheck => Command::KernelCheck,
            Cmd::Lclt => Command::Lclt,
            Cmd::GreenBound => Command::GreenBound,
            Cmd::Simulate => Command::Simulate,
            Cmd::Converge => Command::Converge,
            Cmd::CompareMoments => Command::CompareMoments,
            Cmd::Lyapunov => Command::Lyapunov,
            Cmd::Holder => Command::Holder,
        }
    }
}

fn execute(cli: Cli) -> anyhow::Result<bool> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::from_path(path).with_context(|| format!("loading {}", path.display()))?,
        None => RunConfig::from_toml_str("")?,
    };
    config.apply(&Overrides {
        seed: cli.seed,
        replicas: cli.replicas,
        out: cli.out,
    });
    let command = Command::from(cli.command);
    let outcome = run(command, &config).with_context(|| format!("running {}", command.as_str()))?;
    print!("{}", outcome.summary.to_flat_text());
    for f in &outcome.files {
        eprintln!("wrote {}", f.display());
    }
    Ok(outcome.passed)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
