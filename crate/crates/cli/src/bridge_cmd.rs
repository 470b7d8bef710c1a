use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use bridge_core::bridge::{
    bridge_infidelity, bridge_observable_xp, bridge_solve, bridge_solve_xp, refine_grid, BridgeMode, BridgeOptions,
    DEFAULT_GRID_REFINE,
};
use bridge_core::dynamics::{ExactEvolver, MAX_KRYLOV_SITES};
use bridge_core::rayleigh::{exact_gram_pack_xp, RayleighEstimate};
use bridge_core::state::AmplitudeState;
use bridge_core::xprec::DEFAULT_DIGITS;

use crate::error::{CliError, CliResult};
use crate::inputs::{num, parse_observable, write_csv, write_json, FamilyArgs};

/// Pack label of the Hamiltonian; cannot clash with a user label, which never starts with a dot.
const GENERATOR: &str = ".H";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// One step matrix per grid spacing.
    #[default]
    Stepped,
    /// exp(−iMt) recomputed at every output time.
    Direct,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct BridgeCmd {
    /// Manifest written by generate-basis.
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    /// Rayleigh estimate JSON; without it M is computed exactly in extended precision.
    /// An extended-precision matrix stored in the file takes precedence over its double copy.
    #[arg(long, value_name = "FILE")]
    pub rayleigh: Option<PathBuf>,
    /// Output points per basis interval.
    #[arg(long, default_value_t = DEFAULT_GRID_REFINE)]
    pub grid_refine: usize,
    /// Extra time beyond the last basis time.
    #[arg(long, default_value_t = 0.0)]
    pub extrapolate: f64,
    /// Decimal digits of the extended-precision propagation.
    #[arg(long, default_value_t = DEFAULT_DIGITS)]
    pub digits: u32,
    #[arg(long, value_enum, default_value_t = Mode::Stepped)]
    pub mode: Mode,
    /// Observables, comma-separated: mx or label=FILE.
    #[arg(long, value_delimiter = ',')]
    pub obs: Vec<String>,
    /// Skip the exact-evolution infidelity column.
    #[arg(long)]
    pub no_oracle: bool,
    /// Output CSV file.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Also write the trajectory with full α vectors as JSON.
    #[arg(long, value_name = "FILE")]
    pub json: Option<PathBuf>,
}

impl BridgeCmd {
    pub fn run(&self) -> CliResult<()> {
        let loaded = FamilyArgs {
            manifest: Some(self.manifest.clone()),
            family: Vec::new(),
        }
        .load()?;
        let manifest = loaded.manifest.as_ref().expect("loaded from a manifest");
        let family = &loaded.family;
        let h = manifest.hamiltonian()?;
        let times = refine_grid(&manifest.report.times, self.grid_refine, self.extrapolate)?;
        let opts = BridgeOptions {
            digits: self.digits,
            mode: match self.mode {
                Mode::Stepped => BridgeMode::Stepped,
                Mode::Direct => BridgeMode::Direct,
            },
        };
        let observables = self
            .obs
            .iter()
            .map(|s| parse_observable(s, family.n()))
            .collect::<CliResult<Vec<_>>>()?;
        let mut ops: Vec<(&str, &_)> = observables.iter().map(|(l, o)| (l.as_str(), o)).collect();
        if self.rayleigh.is_none() {
            ops.push((GENERATOR, &h));
        }
        let pack = if ops.is_empty() {
            None
        } else {
            Some(exact_gram_pack_xp(family, &ops, self.digits)?)
        };
        let traj = match (&self.rayleigh, &pack) {
            (Some(path), _) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
                let est = RayleighEstimate::from_json(&text)?;
                if est.m() != family.m() {
                    return Err(CliError::invalid(format!(
                        "Rayleigh matrix is {}×{}, the family has {} members",
                        est.m(),
                        est.m(),
                        family.m()
                    )));
                }
                match &est.matrix_xp {
                    Some(xm) => bridge_solve_xp(xm, None, &times, &opts, &est.operator)?,
                    None => bridge_solve(&est.matrix, None, &times, &opts)?,
                }
            }
            (None, Some(pack)) => bridge_solve_xp(&pack.rayleigh(GENERATOR)?, None, &times, &opts, "exact")?,
            (None, None) => unreachable!("the generator is always in the pack"),
        };
        let series = match &pack {
            Some(pack) => observables
                .iter()
                .map(|(label, _)| bridge_observable_xp(pack, label, &traj))
                .collect::<bridge_core::Result<Vec<_>>>()?,
            None => Vec::new(),
        };
        let oracle = if self.no_oracle || h.n() > MAX_KRYLOV_SITES {
            None
        } else {
            let evolver = ExactEvolver::new(&h)?;
            let psi0 = family.member(0);
            let states = times
                .iter()
                .map(|&t| evolver.evolve(psi0, t))
                .collect::<bridge_core::Result<Vec<AmplitudeState>>>()?;
            Some(bridge_infidelity(&traj, family, &states)?)
        };

        let mut header = vec!["t".to_string(), "alpha_norm".to_string()];
        header.extend(observables.iter().map(|(l, _)| format!("obs_{l}")));
        if oracle.is_some() {
            header.push("infidelity".into());
        }
        let norms = traj.alpha_norms();
        let rows: Vec<Vec<String>> = (0..times.len())
            .map(|k| {
                let mut row = vec![num(times[k]), num(norms[k])];
                row.extend(series.iter().map(|s| num(s.values[k])));
                if let Some(inf) = &oracle {
                    row.push(num(inf[k]));
                }
                row
            })
            .collect();
        write_csv(&self.out, &header, &rows)?;
        if let Some(path) = &self.json {
            write_json(path, &traj)?;
        }
        log::info!("{} times, max growth {:.3e}", times.len(), traj.max_growth);
        if let Some(inf) = &oracle {
            let last_basis = self.grid_refine * (manifest.report.times.len() - 1);
            log::info!(
                "Bridge infidelity at the last basis time {:e} (basis {:e})",
                inf[last_basis],
                manifest.report.infidelity.last().copied().unwrap_or(f64::NAN)
            );
        }
        Ok(())
    }
}
