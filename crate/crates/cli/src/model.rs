use std::io::Write;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use bridge_core::dynamics::{generate_basis, Noise, SchemeSpec};
use bridge_core::oracle::{diagonalize, lanczos_ground_state, MAX_DIAG_SITES};
use bridge_core::spin_model::{magnetization_x, OperatorTerms};

use crate::error::{CliError, CliResult};
use crate::inputs::{num, parse_psi0, write_bytes, write_csv, write_json, Manifest, ModelArgs};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Part {
    /// The full Hamiltonian.
    #[default]
    Full,
    /// −Σ σᶻσᶻ over the bonds.
    Zz,
    /// −Σ σˣ.
    X,
    /// (1/n) Σ σˣ.
    Mx,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct ModelCmd {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Which operator to emit.
    #[arg(long, value_enum, default_value_t = Part::Full)]
    pub part: Part,
    /// Emit the dense matrix as CSV instead of the term list as JSON.
    #[arg(long)]
    pub dump: bool,
    /// Output file (default: stdout).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Also write the ground state of the operator to this state file.
    #[arg(long, value_name = "FILE")]
    pub ground_state: Option<PathBuf>,
    /// Lanczos tolerance and seed when the system is too large for full diagonalization.
    #[arg(long, default_value_t = 1e-10)]
    pub lanczos_tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl ModelCmd {
    fn operator(&self) -> CliResult<OperatorTerms> {
        match self.part {
            Part::Full => self.model.build(),
            Part::Zz => Ok(self.model.parts()?.0),
            Part::X => Ok(self.model.parts()?.1),
            Part::Mx => {
                let n = self.model.parts()?.0.n();
                Ok(magnetization_x(n)?)
            }
        }
    }

    pub fn run(&self) -> CliResult<()> {
        let op = self.operator()?;
        let bytes = if self.dump {
            let dense = op.to_dense_real();
            let mut out = Vec::new();
            for i in 0..dense.nrows() {
                let row: Vec<String> = (0..dense.ncols()).map(|j| format!("{}", dense[(i, j)])).collect();
                writeln!(out, "{}", row.join(","))?;
            }
            out
        } else {
            let mut text = serde_json::to_string_pretty(&op.to_spec())?;
            text.push('\n');
            text.into_bytes()
        };
        match &self.out {
            Some(path) => {
                write_bytes(path, &bytes)?;
                log::info!("operator on {} sites written to {}", op.n(), path.display());
            }
            None => std::io::stdout().write_all(&bytes)?,
        }
        if let Some(path) = &self.ground_state {
            let (e0, state) = if op.n() <= MAX_DIAG_SITES {
                let spec = diagonalize(&op)?;
                (spec.values[0], spec.ground_state()?)
            } else {
                lanczos_ground_state(&op, self.lanczos_tol, self.seed)?
            };
            state.write_qsv(path)?;
            log::info!("ground state (E0 = {e0}) written to {}", path.display());
        }
        Ok(())
    }
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct GenerateBasisCmd {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Initial state: uniform, up, or a state file.
    #[arg(long, default_value = "uniform")]
    pub psi0: String,
    /// Time step δ between consecutive members.
    #[arg(long)]
    pub delta: f64,
    /// Number of steps; the family has steps + 1 members.
    #[arg(long)]
    pub steps: usize,
    /// exact, trotter2, lpe<k>, slpe<k> or taylor<k>.
    #[arg(long, default_value = "trotter2")]
    pub scheme: String,
    /// none or g:<eps> for relative complex Gaussian noise after each step.
    #[arg(long, default_value = "none")]
    pub noise: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for basis_XXX.qsv, manifest.json and report.csv.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

impl GenerateBasisCmd {
    pub fn run(&self) -> CliResult<()> {
        let h = self.model.build()?;
        let psi0 = parse_psi0(&self.psi0, h.n())?;
        let scheme: SchemeSpec = self.scheme.parse()?;
        let noise: Noise = self.noise.parse()?;
        if self.out.is_file() {
            return Err(CliError::invalid(format!("{} is a file, not a directory", self.out.display())));
        }
        let (family, mut report) = generate_basis(&h, &psi0, self.delta, self.steps, &scheme, noise, self.seed)?;
        report.files = family.write_dir(&self.out, "basis")?;
        let rows: Vec<Vec<String>> = (0..report.times.len())
            .map(|k| {
                vec![
                    k.to_string(),
                    num(report.times[k]),
                    num(report.infidelity[k]),
                    num(report.step_infidelity[k]),
                ]
            })
            .collect();
        let header = ["k", "t", "infidelity", "step_infidelity"].map(String::from);
        write_csv(&self.out.join("report.csv"), &header, &rows)?;
        let last = report.infidelity.len() - 1;
        log::info!(
            "{} members written to {}; final infidelity {:e}",
            family.m(),
            self.out.display(),
            report.infidelity[last]
        );
        let manifest = Manifest {
            report,
            hamiltonian: h.to_spec(),
        };
        write_json(&self.out.join("manifest.json"), &manifest)
    }
}
