use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use bridge_core::oracle::{diagonalize, infidelity, lanczos_ground_state, MAX_DIAG_SITES};
use bridge_core::rayleigh::{exact_gram_pack, AssemblyPolicy};
use bridge_core::spin_model::{combine_terms, OperatorTerms};
use bridge_core::subspace::{
    reconstruct, ritz_observable, ritz_spectrum, subspace_distance_exact, subspace_distance_mc, GroundStateInterpolator,
    RitzResult,
};
use bridge_core::C64;

use crate::error::{CliError, CliResult};
use crate::estimate::{operator_for, SamplerArgs};
use crate::inputs::{load_family, load_operator, num, parse_grid, parse_observable, write_csv, write_json, FamilyArgs, ModelArgs};

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct GsInterpolateCmd {
    #[command(flatten)]
    pub family: FamilyArgs,
    /// Operator files H₀,H₁,…; the query Hamiltonian is H₀ + … + γ·H_last.
    #[arg(long, value_delimiter = ',', required = true)]
    pub parts: Vec<PathBuf>,
    /// γ grid as start:stop:count.
    #[arg(long)]
    pub grid: String,
    #[arg(long, default_value = "xp:200")]
    pub policy: String,
    /// Skip the exact ground-state comparison.
    #[arg(long)]
    pub no_oracle: bool,
    /// Lanczos tolerance and seed for the exact ground states beyond dense size.
    #[arg(long, default_value_t = 1e-10)]
    pub lanczos_tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV file.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

impl GsInterpolateCmd {
    pub fn run(&self) -> CliResult<()> {
        let family = self.family.load()?.family;
        let parts = self
            .parts
            .iter()
            .map(|p| load_operator(p))
            .collect::<CliResult<Vec<OperatorTerms>>>()?;
        if parts.iter().any(|p| p.n() != family.n()) {
            return Err(CliError::invalid("every part must act on the family's sites"));
        }
        let labels: Vec<String> = (0..parts.len()).map(|k| format!("H{k}")).collect();
        let ops: Vec<(&str, &OperatorTerms)> = labels.iter().map(String::as_str).zip(&parts).collect();
        let pack = exact_gram_pack(&family, &ops)?;
        let policy: AssemblyPolicy = self.policy.parse()?;
        let label_refs: Vec<&str> = labels.iter().map(String::as_str).collect();
        let interp = GroundStateInterpolator::new(&[&pack], &label_refs, policy)?;
        let grid = parse_grid(&self.grid)?;
        let coefficients = |g: f64| {
            let mut c = vec![1.0; parts.len()];
            *c.last_mut().unwrap() = g;
            c
        };
        let rows = grid
            .par_iter()
            .map(|&g| -> CliResult<Vec<String>> {
                let gamma = coefficients(g);
                let q = interp.query(&gamma)?;
                let mut row = vec![num(g), num(q.mu0)];
                if !self.no_oracle {
                    let h = combine_terms(&gamma, &parts)?;
                    let (e0, exact) = if h.n() <= MAX_DIAG_SITES {
                        let spec = diagonalize(&h)?;
                        (spec.values[0], spec.ground_state()?)
                    } else {
                        lanczos_ground_state(&h, self.lanczos_tol, self.seed)?
                    };
                    row.push(num(infidelity(&reconstruct(&family, &q.alpha)?, &exact)?));
                    row.push(num(e0));
                }
                Ok(row)
            })
            .collect::<CliResult<Vec<_>>>()?;
        let mut header = vec!["gamma".to_string(), "mu0".to_string()];
        if !self.no_oracle {
            header.push("infidelity_vs_exact".into());
            header.push("e0_exact".into());
        }
        write_csv(&self.out, &header, &rows)?;
        log::info!("{} query points from {} basis states", grid.len(), family.m());
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceMethod {
    /// Principal angles from orthonormalized dense bases.
    #[default]
    Exact,
    /// Determinant-state Monte Carlo estimate.
    Mc,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct DistanceCmd {
    /// First family, comma-separated state files.
    #[arg(long, value_delimiter = ',', required = true)]
    pub u: Vec<PathBuf>,
    /// Second family, comma-separated state files.
    #[arg(long, value_delimiter = ',', required = true)]
    pub v: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = DistanceMethod::Exact)]
    pub method: DistanceMethod,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    /// Output JSON file.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct DistanceReport {
    method: DistanceMethod,
    m: usize,
    distance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    std_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    estimate: Option<bridge_core::subspace::DistanceEstimate>,
}

impl DistanceCmd {
    pub fn run(&self) -> CliResult<()> {
        let u = load_family(&self.u)?;
        let v = load_family(&self.v)?;
        let report = match self.method {
            DistanceMethod::Exact => DistanceReport {
                method: self.method,
                m: u.m(),
                distance: subspace_distance_exact(&u, &v)?,
                std_error: None,
                estimate: None,
            },
            DistanceMethod::Mc => {
                let est = subspace_distance_mc(&u, &v, &self.sampler.config())?;
                DistanceReport {
                    method: self.method,
                    m: u.m(),
                    distance: est.distance,
                    std_error: Some(est.std_error),
                    estimate: Some(est),
                }
            }
        };
        log::info!("distance {:e}", report.distance);
        write_json(&self.out, &report)
    }
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct ExcitedCmd {
    #[command(flatten)]
    pub family: FamilyArgs,
    /// Hamiltonian; defaults to the manifest's.
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value = "xp:200")]
    pub policy: String,
    /// Observables averaged over each Ritz vector: mx or label=FILE.
    #[arg(long, value_delimiter = ',')]
    pub obs: Vec<String>,
    /// Output JSON file.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct ExcitedReport {
    ritz: RitzResult,
    /// α^(k)†Gα^(k) per Ritz vector.
    norms: Vec<f64>,
    observables: BTreeMap<String, Vec<f64>>,
}

impl ExcitedCmd {
    pub fn run(&self) -> CliResult<()> {
        let loaded = self.family.load()?;
        let h = operator_for(&self.model, &loaded)?;
        let family = &loaded.family;
        let observables = self
            .obs
            .iter()
            .map(|s| parse_observable(s, family.n()))
            .collect::<CliResult<Vec<_>>>()?;
        let mut ops: Vec<(&str, &OperatorTerms)> = vec![(".H", &h)];
        ops.extend(observables.iter().map(|(l, o)| (l.as_str(), o)));
        let pack = exact_gram_pack(family, &ops)?;
        let policy: AssemblyPolicy = self.policy.parse()?;
        let ritz = ritz_spectrum(&pack, ".H", policy)?;
        let norms = (0..ritz.m())
            .map(|k| gram_norm(&pack.g, &ritz.vector(k)))
            .collect();
        let observables = observables
            .iter()
            .map(|(label, _)| Ok((label.clone(), ritz_observable(&pack, ".H", label, policy)?.1)))
            .collect::<CliResult<BTreeMap<_, _>>>()?;
        log::info!(
            "lowest Ritz values: {}",
            ritz.values.iter().take(4).map(|v| format!("{v:.10}")).collect::<Vec<_>>().join(", ")
        );
        write_json(&self.out, &ExcitedReport { ritz, norms, observables })
    }
}

/// Re α†Gα.
fn gram_norm(g: &DMatrix<C64>, alpha: &[C64]) -> f64 {
    let a = DVector::from_column_slice(alpha);
    (a.adjoint() * g * &a)[(0, 0)].re
}
