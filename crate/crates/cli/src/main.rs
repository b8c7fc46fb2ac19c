use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use pointctl::config::{parse_config, validate, Format, ProblemSource, RunConfig};
use pointctl::{run, Command, ConfigError, RunError};

/// Optimal control with point objectives: solves and convergence studies.
#[derive(Debug, Parser)]
#[command(name = "pointctl", version)]
struct Cli {
    /// solve | eoc | approx-eoc | newton-table | nu-sweep
    command: String,
    /// key=value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in problem name, overriding the configuration
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    nu: Option<f64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated subset of csv,vtk,txt
    #[arg(long)]
    format: Option<String>,
}

fn build_config(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                ConfigError::Validation(format!("cannot read {}: {e}", path.display()))
            })?;
            parse_config(&text)?
        }
        None => RunConfig::default(),
    };
    cfg.command = cli
        .command
        .parse::<Command>()
        .map_err(ConfigError::Validation)?;
    if let Some(p) = &cli.problem {
        cfg.problem = ProblemSource::Builtin(p.clone());
    }
    if let Some(l) = cli.levels {
        cfg.levels = l;
    }
    if let Some(nu) = cli.nu {
        cfg.nu = Some(nu);
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(f) = &cli.format {
        cfg.formats = f
            .split(',')
            .map(|s| s.trim().parse::<Format>())
            .collect::<Result<_, _>>()
            .map_err(ConfigError::Validation)?;
    }
    validate(&cfg)?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = build_config(&cli)
        .map_err(RunError::from)
        .and_then(|cfg| run(&cfg));
    match result {
        Ok(output) => {
            print!("{}", output.stdout);
            for f in &output.files {
                eprintln!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
