//! `bridge`: model construction, basis generation, Rayleigh estimation, Bridge
//! trajectories and subspace reports from one executable.

mod bench;
mod bridge_cmd;
mod error;
mod estimate;
mod inputs;
mod model;
mod run;
mod subspace_cmd;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::run::{resolve, sidecars, write_snapshot, LogHandle, OutputKind, Snapshot, OUT_DIR_ENV};

#[derive(Parser, Debug)]
#[command(name = "bridge", version, about = "Determinant-state subspace methods and Bridge post-processing")]
struct Cli {
    /// Worker threads for sampling and dense kernels (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: TopLevel,
}

#[derive(Subcommand, Debug)]
enum TopLevel {
    #[command(flatten)]
    Run(Command),
    /// Repeat a run from its resolved-config snapshot.
    Rerun {
        /// A `*.config.json` or `config.json` written by an earlier run.
        snapshot: PathBuf,
    },
}

#[derive(Subcommand, Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Build an operator and print or save it as JSON or as a dense matrix.
    Model(model::ModelCmd),
    /// Generate a basis family by a discretization scheme.
    GenerateBasis(model::GenerateBasisCmd),
    /// Estimate a Rayleigh matrix G⁻¹G^(O).
    Rayleigh(estimate::RayleighCmd),
    /// Solve the linear TDVP in a basis family on a fine time grid.
    Bridge(bridge_cmd::BridgeCmd),
    /// Interpolate ground states over a parameter grid from one family.
    GsInterpolate(subspace_cmd::GsInterpolateCmd),
    /// Distance between two subspaces.
    Distance(subspace_cmd::DistanceCmd),
    /// Ritz values and vectors of a family.
    Excited(subspace_cmd::ExcitedCmd),
    /// Compare Rayleigh estimators by the final Bridge infidelity they produce.
    BenchEstimators(bench::BenchCmd),
}

impl Command {
    fn resolve_outputs(&mut self, base: Option<&Path>) {
        match self {
            Command::Model(c) => {
                if let Some(p) = c.out.as_mut() {
                    resolve(p, base);
                }
                if let Some(p) = c.ground_state.as_mut() {
                    resolve(p, base);
                }
            }
            Command::GenerateBasis(c) => resolve(&mut c.out, base),
            Command::Rayleigh(c) => resolve(&mut c.out, base),
            Command::Bridge(c) => {
                resolve(&mut c.out, base);
                if let Some(p) = c.json.as_mut() {
                    resolve(p, base);
                }
            }
            Command::GsInterpolate(c) => resolve(&mut c.out, base),
            Command::Distance(c) => resolve(&mut c.out, base),
            Command::Excited(c) => resolve(&mut c.out, base),
            Command::BenchEstimators(c) => resolve(&mut c.out, base),
        }
    }

    fn output(&self) -> OutputKind<'_> {
        match self {
            Command::Model(c) => c.out.as_deref().or(c.ground_state.as_deref()).map_or(OutputKind::None, OutputKind::File),
            Command::GenerateBasis(c) => OutputKind::Dir(&c.out),
            Command::Rayleigh(c) => OutputKind::File(&c.out),
            Command::Bridge(c) => OutputKind::File(&c.out),
            Command::GsInterpolate(c) => OutputKind::File(&c.out),
            Command::Distance(c) => OutputKind::File(&c.out),
            Command::Excited(c) => OutputKind::File(&c.out),
            Command::BenchEstimators(c) => OutputKind::File(&c.out),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Model(_) => "model",
            Command::GenerateBasis(_) => "generate-basis",
            Command::Rayleigh(_) => "rayleigh",
            Command::Bridge(_) => "bridge",
            Command::GsInterpolate(_) => "gs-interpolate",
            Command::Distance(_) => "distance",
            Command::Excited(_) => "excited",
            Command::BenchEstimators(_) => "bench-estimators",
        }
    }

    fn execute(&self) -> CliResult<()> {
        match self {
            Command::Model(c) => c.run(),
            Command::GenerateBasis(c) => c.run(),
            Command::Rayleigh(c) => c.run(),
            Command::Bridge(c) => c.run(),
            Command::GsInterpolate(c) => c.run(),
            Command::Distance(c) => c.run(),
            Command::Excited(c) => c.run(),
            Command::BenchEstimators(c) => c.run(),
        }
    }
}

fn run(snapshot: Snapshot, log: &LogHandle) -> CliResult<()> {
    if let Some(n) = snapshot.threads {
        if n == 0 {
            return Err(CliError::invalid("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::invalid(e.to_string()))?;
    }
    let command = &snapshot.command;
    if let Some((config, log_path)) = sidecars(&command.output()) {
        log.attach(&log_path)?;
        write_snapshot(&config, &snapshot)?;
        log::info!("resolved config written to {}", config.display());
    }
    let start = Instant::now();
    log::info!("{} started", command.name());
    command.execute()?;
    log::info!("{} finished in {:.3} s", command.name(), start.elapsed().as_secs_f64());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let log = LogHandle::init();
    let snapshot = match cli.command {
        TopLevel::Run(mut command) => {
            let base = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from);
            command.resolve_outputs(base.as_deref());
            Snapshot {
                version: env!("CARGO_PKG_VERSION").to_string(),
                threads: cli.threads,
                command,
            }
        }
        TopLevel::Rerun { snapshot } => match Snapshot::load(&snapshot) {
            Ok(mut s) => {
                s.threads = cli.threads.or(s.threads);
                s
            }
            Err(e) => {
                eprintln!("{e}");
                return e.exit_code();
            }
        },
    };
    match run(snapshot, &log) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            e.exit_code()
        }
    }
}
