use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use metalloc::runner::{self, CriterionKind, Mode, Report, RunOptions, Scenario};
use metalloc::{DesignError, Result};

#[derive(Parser)]
#[command(name = "metalloc", version, about = "Optimal allocation of trial locations to sub-regions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Records,
}

#[derive(Clone, Copy, ValueEnum)]
enum CriterionArg {
    A,
    WeightedA,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Approx,
    Exact,
    EqualEff,
}

#[derive(clap::Args)]
struct Output {
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
    /// Report zero wall time so output is byte-reproducible.
    #[arg(long)]
    omit_timing: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize every (J, sigma2) cell of a scenario file.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        criterion: Option<CriterionArg>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[command(flatten)]
        output: Output,
    },
    /// Check closed-form MSEs against the full mixed model and simulation.
    Validate {
        #[arg(long)]
        config: PathBuf,
        /// Monte Carlo replications (0 skips the simulation).
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        output: Output,
    },
    /// Run one of the bundled maize reference tables.
    Tables {
        #[arg(long, value_parser = clap::value_parser!(u8).range(2..=5))]
        which: u8,
        #[command(flatten)]
        output: Output,
    },
}

fn emit(report: &Report, output: &Output) -> Result<()> {
    let text = match output.format {
        Format::Table => report.to_table(),
        Format::Records => report.to_records(),
    };
    match &output.out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run_and_emit(sc: &Scenario, output: &Output) -> Result<Report> {
    let report = runner::run_scenario_with(sc, &RunOptions { omit_timing: output.omit_timing })?;
    emit(&report, output)?;
    Ok(report)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Optimize { config, criterion, mode, output } => {
            let mut sc = runner::load_config(&config)?;
            if let Some(c) = criterion {
                sc = sc.with_criterion(match c {
                    CriterionArg::A => CriterionKind::A,
                    CriterionArg::WeightedA => CriterionKind::WeightedA,
                })?;
            }
            if let Some(m) = mode {
                sc.mode = match m {
                    ModeArg::Approx => Mode::Approx,
                    ModeArg::Exact => Mode::Exact,
                    ModeArg::EqualEff => Mode::EqualEff,
                };
            }
            if sc.mode == Mode::Validate {
                return Err(DesignError::Config {
                    path: "mode".into(),
                    message: "use the `validate` subcommand".into(),
                });
            }
            run_and_emit(&sc, &output)?;
        }
        Command::Validate { config, reps, seed, output } => {
            let mut sc = runner::load_config(&config)?;
            sc.mode = Mode::Validate;
            if let Some(r) = reps {
                sc.validation.replications = r;
            }
            if let Some(s) = seed {
                sc.validation.seed = s;
            }
            let report = run_and_emit(&sc, &output)?;
            let failed = report
                .records
                .iter()
                .filter(|r| r.validation.as_ref().is_some_and(|v| !v.passed))
                .count();
            if failed > 0 {
                return Err(DesignError::Numerical(format!("{failed} cell(s) failed validation")));
            }
        }
        Command::Tables { which, output } => {
            run_and_emit(&runner::bundled_table(which)?, &output)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
