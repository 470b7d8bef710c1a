use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use bridge_core::bridge::{bridge_infidelity, bridge_solve, BridgeOptions};
use bridge_core::dynamics::{generate_basis, ExactEvolver, Noise, SchemeSpec};
use bridge_core::linalg::condition_number;
use bridge_core::rayleigh::{
    assemble_rayleigh, assemble_rayleigh_xp, estimate_det_state, estimate_sum_of_states, exact_gram_pack_xp,
    AssemblyPolicy,
};
use bridge_core::state::AmplitudeState;
use bridge_core::C64;

use crate::error::CliResult;
use crate::estimate::SamplerArgs;
use crate::inputs::{num, parse_psi0, write_csv, ModelArgs};

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct BenchCmd {
    /// Hamiltonian (default: open 8-site chain, J = 1, h = 2).
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value = "uniform")]
    pub psi0: String,
    #[arg(long, default_value_t = 0.025)]
    pub delta: f64,
    #[arg(long, default_value_t = 20)]
    pub steps: usize,
    #[arg(long, default_value = "trotter2")]
    pub scheme: String,
    #[arg(long, default_value = "g:1e-4")]
    pub noise: String,
    /// Seed of the basis-generation noise.
    #[arg(long, default_value_t = 1)]
    pub basis_seed: u64,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    /// Pseudo-inverse cutoffs for the sum-of-states estimator.
    #[arg(long, value_delimiter = ',', default_value = "1e-9,1e-11,1e-13")]
    pub rconds: Vec<f64>,
    /// Digits of the extended-precision assemblies and of the Bridge solve.
    #[arg(long, default_value_t = 200)]
    pub digits: u32,
    /// Output CSV table.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

impl BenchCmd {
    pub fn run(&self) -> CliResult<()> {
        let mut model = self.model.clone();
        if model.op.is_none() && model.geometry.is_none() {
            model.geometry = Some("chain:8:open".into());
            model.h = model.h.or(Some(2.0));
        }
        let h = model.build()?;
        let psi0 = parse_psi0(&self.psi0, h.n())?;
        let scheme: SchemeSpec = self.scheme.parse()?;
        let noise: Noise = self.noise.parse()?;
        let (family, report) = generate_basis(&h, &psi0, self.delta, self.steps, &scheme, noise, self.basis_seed)?;
        let xpack = exact_gram_pack_xp(&family, &[("H", &h)], self.digits)?;
        let cond = condition_number(&xpack.g.to_c64());
        let evolver = ExactEvolver::new(&h)?;
        let oracle = report
            .times
            .iter()
            .map(|&t| evolver.evolve(&psi0, t))
            .collect::<bridge_core::Result<Vec<AmplitudeState>>>()?;
        let last = report.times.len() - 1;
        let opts = BridgeOptions {
            digits: self.digits,
            ..BridgeOptions::default()
        };
        // a failed solve counts as total loss of fidelity
        let final_infidelity = |m: &DMatrix<C64>| -> f64 {
            match bridge_solve(m, None, &report.times, &opts) {
                Ok(t) => bridge_infidelity(&t, &family, &oracle).map_or(1.0, |v| v[last]),
                Err(e) => {
                    log::warn!("Bridge solve failed: {e}");
                    1.0
                }
            }
        };
        let cfg = self.sampler.config();
        let total = cfg.total_samples().to_string();
        let mut rows = Vec::new();

        let start = Instant::now();
        let det = estimate_det_state(&family, &h, "H", &cfg)?;
        let det_time = start.elapsed().as_secs_f64();
        rows.push(vec![
            "det-state".into(),
            total.clone(),
            num(det_time),
            num(final_infidelity(&det.matrix)),
        ]);

        let start = Instant::now();
        let sos = estimate_sum_of_states(&family, &[("H", &h)], &cfg)?;
        let sos_time = start.elapsed().as_secs_f64();
        for &rcond in &self.rconds {
            let start = Instant::now();
            let est = assemble_rayleigh(&sos, "H", AssemblyPolicy::Pinv { rcond })?;
            let t = sos_time + start.elapsed().as_secs_f64();
            rows.push(vec![
                format!("sum-of-states-pinv:{rcond:e}"),
                total.clone(),
                num(t),
                num(final_infidelity(&est.matrix)),
            ]);
        }
        let start = Instant::now();
        let est = assemble_rayleigh(&sos, "H", AssemblyPolicy::Xp { digits: self.digits })?;
        rows.push(vec![
            format!("sum-of-states-xp:{}", self.digits),
            total.clone(),
            num(sos_time + start.elapsed().as_secs_f64()),
            num(final_infidelity(&est.matrix)),
        ]);

        let start = Instant::now();
        let exact = assemble_rayleigh_xp(&xpack, "H")?;
        rows.push(vec![
            "exact-xp".into(),
            "0".into(),
            num(start.elapsed().as_secs_f64()),
            num(final_infidelity(&exact.matrix)),
        ]);
        rows.push(vec!["basis".into(), "0".into(), num(0.0), num(report.infidelity[last])]);

        let header = ["estimator", "samples", "wall_time_s", "final_infidelity"].map(String::from);
        write_csv(&self.out, &header, &rows)?;
        log::info!("m = {}, cond(G) = {cond:.3e}", family.m());
        for row in &rows {
            log::info!("{:<28} {:>10} s  {}", row[0], row[2], row[3]);
        }
        Ok(())
    }
}
