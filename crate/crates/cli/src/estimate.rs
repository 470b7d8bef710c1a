use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use bridge_core::det_state::DetSamplerConfig;
use bridge_core::rayleigh::{
    assemble_rayleigh, assemble_rayleigh_xp, det_state_exhaustive, estimate_det_state, estimate_sum_of_states,
    exact_gram_pack, exact_gram_pack_xp, realify_eigenvalues, sum_of_states_exhaustive, AssemblyPolicy,
    RayleighEstimate,
};
use bridge_core::spin_model::OperatorTerms;

use crate::error::{CliError, CliResult};
use crate::inputs::{write_json, FamilyArgs, LoadedFamily, ModelArgs};

/// Monte Carlo chain settings shared by the sampling commands.
#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct SamplerArgs {
    /// Retained samples per chain.
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    /// Independent chains, run in parallel.
    #[arg(long, default_value_t = 8)]
    pub chains: usize,
    /// Master seed; per-chain seeds are derived from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Proposals between retained samples.
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    /// Proposals discarded per chain before sampling (default 10·n·m).
    #[arg(long)]
    pub burn_in: Option<usize>,
}

impl SamplerArgs {
    pub fn config(&self) -> DetSamplerConfig {
        let cfg = DetSamplerConfig::new(self.chains, self.samples, self.seed).with_thin(self.thin);
        match self.burn_in {
            Some(b) => cfg.with_burn_in(b),
            None => cfg,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    /// Determinant-state Monte Carlo mean of Φ⁻¹Φ^(O).
    Det,
    /// Sum-of-states Monte Carlo estimate of G and G^(O), then assembled by --policy.
    Sos,
    /// Exact G and G^(O) from dense amplitudes, assembled by --policy.
    Exact,
    /// Determinant-state expectation by full enumeration.
    DetExhaustive,
    /// Sum-of-states expectation by full enumeration, assembled by --policy.
    SosExhaustive,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Imag {
    #[default]
    Keep,
    /// Drop the imaginary parts of the reported eigenvalues.
    Discard,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct RayleighCmd {
    #[command(flatten)]
    pub family: FamilyArgs,
    /// Operator; defaults to the manifest's Hamiltonian.
    #[command(flatten)]
    pub model: ModelArgs,
    /// Label stored with the estimate.
    #[arg(long, default_value = "H")]
    pub label: String,
    #[arg(long, value_enum, default_value_t = Estimator::Det)]
    pub estimator: Estimator,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    /// Assembly of G⁻¹G^(O): xp:<digits>, pinv:<rcond>.
    #[arg(long, default_value = "xp:200")]
    pub policy: String,
    #[arg(long, value_enum, default_value_t = Imag::Keep)]
    pub imag: Imag,
    /// Output JSON file.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

/// The operator from the model flags, or else the manifest's Hamiltonian.
pub fn operator_for(model: &ModelArgs, loaded: &LoadedFamily) -> CliResult<OperatorTerms> {
    let op = match model.try_build()? {
        Some(op) => op,
        None => match &loaded.manifest {
            Some(m) => m.hamiltonian()?,
            None => return Err(CliError::invalid("an operator is required: pass --op, --geometry or --manifest")),
        },
    };
    if op.n() != loaded.family.n() {
        return Err(CliError::invalid(format!(
            "operator acts on {} sites, the family on {}",
            op.n(),
            loaded.family.n()
        )));
    }
    Ok(op)
}

impl RayleighCmd {
    pub fn estimate(&self) -> CliResult<RayleighEstimate> {
        let loaded = self.family.load()?;
        let op = operator_for(&self.model, &loaded)?;
        let fam = &loaded.family;
        let policy: AssemblyPolicy = self.policy.parse()?;
        let cfg = self.sampler.config();
        let ops = [(self.label.as_str(), &op)];
        let est = match self.estimator {
            Estimator::Det => estimate_det_state(fam, &op, &self.label, &cfg)?,
            Estimator::DetExhaustive => det_state_exhaustive(fam, &op, &self.label)?,
            Estimator::Sos => {
                let pack = estimate_sum_of_states(fam, &ops, &cfg)?;
                let mut est = assemble_rayleigh(&pack, &self.label, policy)?;
                est.diagnostics = pack.diagnostics;
                est
            }
            Estimator::SosExhaustive => assemble_rayleigh(&sum_of_states_exhaustive(fam, &ops)?, &self.label, policy)?,
            Estimator::Exact => match policy {
                AssemblyPolicy::Xp { digits } => assemble_rayleigh_xp(&exact_gram_pack_xp(fam, &ops, digits)?, &self.label)?,
                _ => assemble_rayleigh(&exact_gram_pack(fam, &ops)?, &self.label, policy)?,
            },
        };
        Ok(match self.imag {
            Imag::Keep => est,
            Imag::Discard => realify_eigenvalues(&est).0,
        })
    }

    pub fn run(&self) -> CliResult<()> {
        let est = self.estimate()?;
        log::info!(
            "{} estimate of '{}' (m = {}, {} samples, {} singular skipped)",
            format!("{:?}", self.estimator).to_lowercase(),
            self.label,
            est.m(),
            est.samples,
            est.skipped_singular
        );
        write_json(&self.out, &est)
    }
}
