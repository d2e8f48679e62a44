use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qrkey_cli::validate::{self, ValidateOptions};
use qrkey_cli::{region, sweep, CliError, RunConfig};

#[derive(Parser)]
#[command(name = "qrkey", version, about = "Secret key rates for QKD over encoded and probabilistic repeater chains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file; defaults to the config's `output`, then stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Secret fraction per level and decoder over an error-parameter sweep.
    SecretFraction,
    /// Per-memory key rates over a distance sweep.
    RateVsDistance,
    /// Best repeater family over a grid of error parameters.
    RegionMap,
    /// Run the built-in oracle suites.
    Validate {
        #[arg(long, hide = true, default_value_t = 0.0)]
        perturb_decoder: f64,
    },
}

fn load(path: Option<&Path>) -> Result<RunConfig, CliError> {
    RunConfig::load(path.ok_or_else(|| CliError::Config("--config is required".into()))?)
}

fn emit(text: &str, path: Option<&Path>) -> Result<(), CliError> {
    let result = match path {
        Some(p) => std::fs::write(p, text),
        None => std::io::stdout().lock().write_all(text.as_bytes()),
    };
    result.map_err(|e| CliError::Config(format!("cannot write output: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let config = cli.config.as_deref();
    match cli.command {
        Command::Validate { perturb_decoder } => {
            let results = validate::run_validation(ValidateOptions { seed: cli.seed, decoder_perturbation: perturb_decoder })?;
            emit(&validate::report(&results), cli.out.as_deref())?;
            let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
            if !failed.is_empty() {
                return Err(CliError::Validation(failed.join(", ")));
            }
            Ok(())
        }
        cmd => {
            let cfg = load(config)?;
            let out = cli.out.clone().or_else(|| cfg.output.clone());
            let text = match cmd {
                Command::SecretFraction => sweep::secret_fraction(&cfg, cli.seed)?,
                Command::RateVsDistance => {
                    let r = sweep::rate_vs_distance(&cfg, cli.seed)?;
                    if r.mux_warnings > 0 {
                        eprintln!("warning: {} multiplexed rows have N_m P0 < 10", r.mux_warnings);
                    }
                    r.csv
                }
                Command::RegionMap => region::region_map(&cfg, cli.seed)?,
                Command::Validate { .. } => unreachable!(),
            };
            emit(&text, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qrkey: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
