use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use signchange::config::{parse_config, RunConfig};
use signchange::pipeline::{run, RunOptions, Subcommand};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    CheckHypotheses,
    SolveSector,
    MoserLimits,
    Assemble,
    Full,
}

impl From<Command> for Subcommand {
    fn from(c: Command) -> Self {
        match c {
            Command::CheckHypotheses => Subcommand::CheckHypotheses,
            Command::SolveSector => Subcommand::SolveSector,
            Command::MoserLimits => Subcommand::MoserLimits,
            Command::Assemble => Subcommand::Assemble,
            Command::Full => Subcommand::Full,
        }
    }
}

/// Sign-changing solutions of −Δu = f(u) on the unit disk.
#[derive(Debug, Parser)]
#[command(name = "signchange", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// `key = value` configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (falls back to `output.dir` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Leave wall-clock timings out of report.json.
    #[arg(long)]
    no_timings: bool,
}

fn load(path: Option<&PathBuf>) -> Result<RunConfig, String> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_config(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load(cli.config.as_ref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let Some(out) = cli.out.clone().or_else(|| cfg.output_dir.as_ref().map(PathBuf::from)) else {
        eprintln!("error: no output directory (pass --out or set output.dir)");
        return ExitCode::from(2);
    };
    let opts = RunOptions { timings: !cli.no_timings };
    match run(cli.command.into(), &cfg, &out, opts) {
        Ok(report) => {
            let failures = report.failures();
            for f in &failures {
                eprintln!("error: {f}");
            }
            println!(
                "{}: {} ({} invariants, {} files) -> {}",
                report.subcommand,
                if report.passed { "ok" } else { "FAILED" },
                report.invariants.len(),
                report.manifest.len() + 1,
                out.join("report.json").display()
            );
            if report.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
