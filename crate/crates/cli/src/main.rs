//! `taugas` — command-line front-end for the soliton / lattice-Coulomb-gas
//! library: experiment configs, cross-checks, verification suites, and
//! plot-ready tables.
//!
//! Exit status: 0 on success, 1 on validation errors, 2 on numerical
//! verification failure (a residual above threshold), with the failing
//! checks serialized both to stderr and into the report file. Every
//! diagnostic is machine-readable structured text.

mod commands;
mod config;
mod output;
mod suites;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde::Serialize;

use commands::{CorrespondArgs, Ctx, GasArgs, LimitStudyArgs, NmmArgs, TauArgs};
use config::ExperimentConfig;
use output::{CheckRow, Outcome};
use suites::VerifyArgs;

/// Every failure carries a kind tag and a message; verification failures
/// also carry the failing check rows.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config, or data — exit status 1.
    Validation { kind: &'static str, message: String },
    /// A numerical verification failed — exit status 2.
    Verification {
        kind: &'static str,
        message: String,
        failing: Vec<CheckRow>,
    },
}

impl CliError {
    pub fn validation(kind: &'static str, message: String) -> Self {
        CliError::Validation { kind, message }
    }

    pub fn input(message: String) -> Self {
        Self::validation("InputError", message)
    }

    pub fn config(message: String) -> Self {
        Self::validation("ConfigError", message)
    }

    pub fn range(message: String) -> Self {
        Self::validation("RangeError", message)
    }

    pub fn io(context: &str, err: &dyn std::fmt::Display) -> Self {
        Self::validation("IoError", format!("{context}: {err}"))
    }

    pub fn exit_status(&self) -> u8 {
        match self {
            CliError::Validation { .. } => 1,
            CliError::Verification { .. } => 2,
        }
    }

    /// Structured-text rendering for stderr.
    pub fn render(&self) -> String {
        #[derive(Serialize)]
        struct ErrorBody<'a> {
            kind: &'a str,
            message: &'a str,
            exit: u8,
            #[serde(skip_serializing_if = "Vec::is_empty")]
            failing_checks: Vec<CheckRow>,
        }
        #[derive(Serialize)]
        struct ErrorFile<'a> {
            error: ErrorBody<'a>,
        }
        let (kind, message, failing) = match self {
            CliError::Validation { kind, message } => (*kind, message.as_str(), &[][..]),
            CliError::Verification {
                kind,
                message,
                failing,
            } => (*kind, message.as_str(), failing.as_slice()),
        };
        let file = ErrorFile {
            error: ErrorBody {
                kind,
                message,
                exit: self.exit_status(),
                failing_checks: failing.to_vec(),
            },
        };
        toml::to_string(&file).unwrap_or_else(|_| {
            format!(
                "[error]\nkind = \"{kind}\"\nexit = {}\n",
                self.exit_status()
            )
        })
    }
}

impl From<taugas::Error> for CliError {
    fn from(err: taugas::Error) -> Self {
        use taugas::Error as E;
        let kind = match &err {
            E::Coincidence(_) => "CoincidenceError",
            E::Pole(_) => "PoleError",
            E::Truncation { .. } => "TruncationError",
            E::Size { .. } => "SizeError",
            E::Domain(_) => "DomainError",
            E::Mode(_) => "ModeError",
            E::Range(_) => "RangeError",
            E::Input(_) => "InputError",
            E::Unsupported(_) => "UnsupportedError",
            // Numerical failures at run time, not input mistakes.
            E::Degenerate(_) => "DegenerateError",
            E::Contour(_) => "ContourError",
            E::NonConvergence(_) => "NonConvergenceError",
            E::Overflow(_) => "OverflowError",
        };
        match err {
            E::Degenerate(_) | E::Contour(_) | E::NonConvergence(_) | E::Overflow(_) => {
                CliError::Verification {
                    kind,
                    message: err.to_string(),
                    failing: vec![],
                }
            }
            _ => CliError::Validation {
                kind,
                message: err.to_string(),
            },
        }
    }
}

#[derive(Parser)]
#[command(
    name = "taugas",
    version,
    about = "Soliton tau-functions and lattice Coulomb gases: evaluation, cross-checks, \
             and verification suites",
    after_help = "Exit status: 0 success, 1 validation error, 2 numerical verification failure."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config file (structured text with nested sections).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Directory for result files (default: current directory).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Seed for every random draw; a fixed seed fixes the whole experiment.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Byte-identical output for identical config and seed (omits the
    /// timestamp metadata).
    #[arg(long, global = true)]
    deterministic: bool,

    /// Worker threads for large superposition sums (default:
    /// $TAUGAS_WORKERS, else all cores).
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate an N-soliton tau-function on seeded momenta and offsets.
    Tau(TauArgs),
    /// Grand and canonical partition functions of a lattice Coulomb gas.
    Gas(GasArgs),
    /// Cross-check a soliton tau-function against the matching grand
    /// partition function.
    Correspond(CorrespondArgs),
    /// Shrink the conducting disc and compare the gauge tau with the
    /// partition chain.
    LimitStudy(LimitStudyArgs),
    /// Run a verification suite with pinned thresholds.
    Verify(VerifyArgs),
    /// Normal-matrix partition chain by subset enumeration and by the
    /// moment determinant.
    Nmm(NmmArgs),
    /// Mean charge count, mean energy, and per-site occupancies of a gas.
    Observables(GasArgs),
    /// Run the command named by the config file's `command` key.
    Run,
}

fn command_name(command: &Command) -> &'static str {
    match command {
        Command::Tau(_) => "tau",
        Command::Gas(_) => "gas",
        Command::Correspond(_) => "correspond",
        Command::LimitStudy(_) => "limit-study",
        Command::Verify(_) => "verify",
        Command::Nmm(_) => "nmm",
        Command::Observables(_) => "observables",
        Command::Run => "run",
    }
}

/// Resolve `taugas run` into the command the config names; all parameters
/// then come from the config itself.
fn command_from_config(cfg: &ExperimentConfig) -> Result<Command, CliError> {
    let Some(name) = &cfg.command else {
        return Err(CliError::config(
            "`taugas run` needs --config with a `command` key".into(),
        ));
    };
    match name.as_str() {
        "tau" => Ok(Command::Tau(TauArgs::default())),
        "gas" => Ok(Command::Gas(GasArgs::default())),
        "correspond" => Ok(Command::Correspond(CorrespondArgs::default())),
        "limit-study" => Ok(Command::LimitStudy(LimitStudyArgs::default())),
        "verify" => Ok(Command::Verify(VerifyArgs::default())),
        "nmm" => Ok(Command::Nmm(NmmArgs::default())),
        "observables" => Ok(Command::Observables(GasArgs::default())),
        other => Err(CliError::config(format!(
            "unknown command \"{other}\" in config (expected tau, gas, correspond, \
             limit-study, verify, nmm, or observables)"
        ))),
    }
}

/// Size the worker pool: the flag wins, then `TAUGAS_WORKERS`, then the
/// rayon default (all available cores). The pool only affects throughput;
/// results are bit-identical for any worker count.
fn init_workers(explicit: Option<usize>) -> Result<(), CliError> {
    let requested = match explicit {
        Some(workers) => Some(workers),
        None => match std::env::var("TAUGAS_WORKERS") {
            Ok(value) => Some(value.trim().parse::<usize>().map_err(|_| {
                CliError::input(format!(
                    "TAUGAS_WORKERS must be an unsigned integer, got \"{value}\""
                ))
            })?),
            Err(_) => None,
        },
    };
    let Some(workers) = requested else {
        return Ok(());
    };
    if workers == 0 {
        return Err(CliError::input("worker count must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .map_err(|e| CliError::config(format!("initialising {workers} workers: {e}")))
}

fn dispatch(ctx: &Ctx, command: &Command) -> Result<Outcome, CliError> {
    match command {
        Command::Tau(args) => commands::tau(ctx, args),
        Command::Gas(args) => commands::gas(ctx, args),
        Command::Correspond(args) => commands::correspond(ctx, args),
        Command::LimitStudy(args) => commands::limit_study(ctx, args),
        Command::Verify(args) => suites::verify(ctx, args),
        Command::Nmm(args) => commands::nmm(ctx, args),
        Command::Observables(args) => commands::observables(ctx, args),
        Command::Run => unreachable!("resolved before dispatch"),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (cfg, cfg_dir) = match &cli.config {
        Some(path) => (config::load(path)?, path.parent().map(PathBuf::from)),
        None => (ExperimentConfig::default(), None),
    };
    init_workers(cli.workers.or(cfg.workers))?;

    let command = match cli.command {
        Command::Run => command_from_config(&cfg)?,
        explicit => {
            // A config that names a different command than the one invoked
            // is a mistake, not a tie-break.
            if let Some(declared) = &cfg.command {
                let invoked = command_name(&explicit);
                if declared != invoked {
                    return Err(CliError::config(format!(
                        "the config declares command \"{declared}\" but \"{invoked}\" was \
                         invoked; use `taugas run --config …` or align the two"
                    )));
                }
            }
            explicit
        }
    };

    let out_dir = cli
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::io(&format!("creating {}", out_dir.display()), &e))?;

    let ctx = Ctx {
        cfg: &cfg,
        cfg_dir: cfg_dir.as_deref(),
        out_dir: &out_dir,
        seed: cli.seed.or(cfg.seed).unwrap_or(0),
        deterministic: cli.deterministic || cfg.deterministic.unwrap_or(false),
    };
    let outcome = dispatch(&ctx, &command)?;
    for file in &outcome.files {
        println!("wrote {}", file.display());
    }
    println!("{}", outcome.summary);
    if !outcome.failures.is_empty() {
        return Err(CliError::Verification {
            kind: "VerificationError",
            message: format!("{} check(s) exceeded tolerance", outcome.failures.len()),
            failing: outcome.failures,
        });
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                // Help and version are successes, rendered by clap itself.
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    ExitCode::SUCCESS
                }
                // Everything else is a validation error; keep exit status 2
                // reserved for numerical verification failures.
                _ => {
                    let err = CliError::validation("UsageError", e.to_string());
                    eprint!("{}", err.render());
                    ExitCode::from(1)
                }
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprint!("{}", err.render());
            ExitCode::from(err.exit_status())
        }
    }
}
