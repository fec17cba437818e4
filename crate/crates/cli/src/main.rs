#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod output;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use rbergomi::asymptotics::Underlying;
use rbergomi::CalibrationError;

use crate::commands::Outcome;
use crate::config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Core(#[from] rbergomi::Error),
    #[error("output error: {0}")]
    Output(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use rbergomi::Error as E;
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::Output(_) => 1,
            CliError::Core(e) => match e {
                E::Parameter { .. } | E::Domain(_) => 1,
                E::Numerical(_) | E::Inversion(_) => 2,
                E::Calibration(CalibrationError::NonPositiveSkew(..)) => 1,
                E::Calibration(_) => 3,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Parser)]
#[command(name = "rbergomi", version, about = "Rough Bergomi SPX/VIX smiles, asymptotics and calibration")]
struct Cli {
    /// TOML run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. --set model.hurst=0.07 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Write the result here instead of stdout
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, global = true)]
    format: Option<Format>,
    /// Monte Carlo worker threads (default: all cores); results do not depend on it
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Short-maturity VIX and SPX limits
    Asymptotics {
        #[arg(long)]
        no_curvature: bool,
    },
    /// Monte Carlo VIX option smile
    SmileVix {
        #[arg(long)]
        maturity: Option<f64>,
    },
    /// Monte Carlo SPX option smile
    SmileSpx {
        #[arg(long)]
        maturity: Option<f64>,
    },
    /// ATM level, skew and curvature across maturities
    TermStructure,
    /// Fit the model to observed short-maturity limits
    Calibrate {
        /// JSON file with observed limits (or an asymptotics report)
        #[arg(long)]
        limits: Option<PathBuf>,
    },
    /// Run the internal consistency checks
    Verify {
        /// Multiply the closed-form G12 before comparing (negative control)
        #[arg(long, default_value_t = 1.0)]
        perturb_g12: f64,
        #[arg(long)]
        cases: Option<usize>,
    },
    /// Grid dump of the normalised functions over (ã, b̃)
    Sweep,
}

fn run(cli: &Cli) -> Result<Outcome, CliError> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    let csv_default = matches!(
        cli.command,
        Command::SmileVix { .. } | Command::SmileSpx { .. } | Command::TermStructure | Command::Sweep
    );
    let format = cli.format.unwrap_or(if csv_default { Format::Csv } else { Format::Json });
    match &cli.command {
        Command::Asymptotics { no_curvature } => {
            commands::asymptotics(&cfg, cfg.asymptotics.curvature && !no_curvature, format)
        }
        Command::SmileVix { maturity } => commands::smile(&cfg, Underlying::Vix, *maturity, format),
        Command::SmileSpx { maturity } => commands::smile(&cfg, Underlying::Spx, *maturity, format),
        Command::TermStructure => commands::term_structure(&cfg, format),
        Command::Calibrate { limits } => commands::calibrate_cmd(&cfg, limits.as_deref(), format),
        Command::Verify { perturb_g12, cases } => commands::verify(&cfg, *perturb_g12, *cases, format),
        Command::Sweep => commands::sweep(&cfg, format),
    }
}

fn emit(path: Option<&std::path::Path>, text: &str) -> std::io::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(outcome) => {
            if let Err(e) = emit(cli.output.as_deref(), &outcome.text) {
                eprintln!("error: cannot write output: {e}");
                return ExitCode::from(1);
            }
            ExitCode::from(outcome.status)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
