use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use bridge_core::dynamics::GenerationReport;
use bridge_core::spin_model::{build_tfim, magnetization_x, tfim_parts, Geometry, OperatorSpec, OperatorTerms};
use bridge_core::state::{uniform_state, AmplitudeState, BasisFamily};

use crate::error::{CliError, CliResult};

/// Operator given either as a JSON file or as TFIM parameters.
#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct ModelArgs {
    /// Operator JSON file; overrides the model flags.
    #[arg(long, value_name = "FILE")]
    pub op: Option<PathBuf>,
    /// Model family (only `tfim`).
    #[arg(long, value_name = "NAME")]
    pub model: Option<String>,
    /// Lattice as kind:extent:boundary, e.g. chain:10:periodic or square:3:open.
    #[arg(long, value_name = "GEOMETRY")]
    pub geometry: Option<String>,
    /// Coupling J of −J Σ σᶻσᶻ.
    #[arg(long = "J", value_name = "J")]
    pub j: Option<f64>,
    /// Transverse field h of −h Σ σˣ.
    #[arg(long = "h", value_name = "H")]
    pub h: Option<f64>,
}

impl ModelArgs {
    fn given(&self) -> bool {
        self.op.is_some() || self.model.is_some() || self.geometry.is_some() || self.j.is_some() || self.h.is_some()
    }

    /// The operator, or `None` when no model flag was given.
    pub fn try_build(&self) -> CliResult<Option<OperatorTerms>> {
        if !self.given() {
            return Ok(None);
        }
        if let Some(path) = &self.op {
            if self.model.is_some() || self.geometry.is_some() || self.j.is_some() || self.h.is_some() {
                return Err(CliError::invalid("--op cannot be combined with model flags"));
            }
            return Ok(Some(load_operator(path)?));
        }
        let model = self.model.as_deref().unwrap_or("tfim");
        if model != "tfim" {
            return Err(CliError::invalid(format!("unknown model '{model}' (supported: tfim)")));
        }
        let geometry = self
            .geometry
            .as_deref()
            .ok_or_else(|| CliError::invalid("--geometry is required for --model tfim"))?;
        let geometry: Geometry = geometry.parse()?;
        Ok(Some(build_tfim(geometry, self.j.unwrap_or(1.0), self.h.unwrap_or(1.0))?))
    }

    pub fn build(&self) -> CliResult<OperatorTerms> {
        self.try_build()?
            .ok_or_else(|| CliError::invalid("an operator is required: pass --op FILE or --geometry with TFIM flags"))
    }

    /// The two TFIM pieces for the configured geometry.
    pub fn parts(&self) -> CliResult<(OperatorTerms, OperatorTerms)> {
        let geometry = self
            .geometry
            .as_deref()
            .ok_or_else(|| CliError::invalid("--geometry is required"))?;
        Ok(tfim_parts(geometry.parse()?)?)
    }
}

pub fn load_operator(path: &Path) -> CliResult<OperatorTerms> {
    OperatorTerms::load_json(path).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
}

/// Named observable: `mx` for the x magnetization or `label=FILE` for an operator file.
pub fn parse_observable(spec: &str, n: usize) -> CliResult<(String, OperatorTerms)> {
    match spec.split_once('=') {
        Some((label, path)) => {
            if label.is_empty() || label.starts_with('.') {
                return Err(CliError::invalid(format!("bad observable label '{label}'")));
            }
            let op = load_operator(Path::new(path))?;
            if op.n() != n {
                return Err(CliError::invalid(format!(
                    "observable '{label}' acts on {} sites, the family on {n}",
                    op.n()
                )));
            }
            Ok((label.to_string(), op))
        }
        None if spec.eq_ignore_ascii_case("mx") => Ok(("Mx".into(), magnetization_x(n)?)),
        None => Err(CliError::invalid(format!(
            "observable '{spec}' is neither 'mx' nor label=FILE"
        ))),
    }
}

/// Initial state: `uniform`, `up` or a state file.
pub fn parse_psi0(spec: &str, n: usize) -> CliResult<AmplitudeState> {
    let state = match spec {
        "uniform" => uniform_state(n)?,
        "up" => bridge_core::state::basis_state(bridge_core::spin_model::SpinConfig::up(n)?)?,
        path => AmplitudeState::read_qsv(path).map_err(|e| CliError::invalid(format!("{path}: {e}")))?,
    };
    if state.n() != n {
        return Err(CliError::invalid(format!(
            "initial state has {} sites, the Hamiltonian {n}",
            state.n()
        )));
    }
    Ok(state)
}

/// What `generate-basis` leaves next to the state files.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub report: GenerationReport,
    pub hamiltonian: OperatorSpec,
}

impl Manifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
    }

    pub fn hamiltonian(&self) -> CliResult<OperatorTerms> {
        Ok(OperatorTerms::from_spec(&self.hamiltonian)?)
    }
}

/// Basis family given by a manifest or by a list of state files.
#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct FamilyArgs {
    /// Manifest written by generate-basis.
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    /// Comma-separated state files.
    #[arg(long, value_name = "FILES", value_delimiter = ',', conflicts_with = "manifest")]
    pub family: Vec<PathBuf>,
}

pub struct LoadedFamily {
    pub family: BasisFamily,
    pub manifest: Option<Manifest>,
}

impl FamilyArgs {
    pub fn load(&self) -> CliResult<LoadedFamily> {
        if let Some(path) = &self.manifest {
            let manifest = Manifest::load(path)?;
            let dir = path.parent().unwrap_or(Path::new("."));
            let files: Vec<PathBuf> = manifest.report.files.iter().map(|f| dir.join(f)).collect();
            let family = load_family(&files)?;
            return Ok(LoadedFamily {
                family,
                manifest: Some(manifest),
            });
        }
        if self.family.is_empty() {
            return Err(CliError::invalid("a basis family is required: pass --manifest or --family"));
        }
        Ok(LoadedFamily {
            family: load_family(&self.family)?,
            manifest: None,
        })
    }
}

pub fn load_family(paths: &[PathBuf]) -> CliResult<BasisFamily> {
    for p in paths {
        if !p.exists() {
            return Err(CliError::invalid(format!("missing state file {}", p.display())));
        }
    }
    let family = BasisFamily::load(paths)?;
    let diag = family.independence_diagnostic();
    if diag < INDEPENDENCE_WARN {
        log::warn!("family members are nearly dependent: λ_min/λ_max of G is {diag:.3e}");
    }
    Ok(family)
}

/// Gram eigenvalue ratio below which a loaded family triggers a warning.
const INDEPENDENCE_WARN: f64 = 1e-14;

/// `a:b:N` as N evenly spaced points from a to b inclusive.
pub fn parse_grid(spec: &str) -> CliResult<Vec<f64>> {
    let bad = || CliError::invalid(format!("grid '{spec}' is not start:stop:count"));
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let a: f64 = parts[0].parse().map_err(|_| bad())?;
    let b: f64 = parts[1].parse().map_err(|_| bad())?;
    let n: usize = parts[2].parse().map_err(|_| bad())?;
    if n == 0 || !a.is_finite() || !b.is_finite() {
        return Err(bad());
    }
    if n == 1 {
        return Ok(vec![a]);
    }
    Ok((0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect())
}

pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> CliResult<()> {
    let mut out = Vec::new();
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        writeln!(out, "{}", row.join(","))?;
    }
    write_bytes(path, &out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
}

pub fn num(x: f64) -> String {
    format!("{x:e}")
}
