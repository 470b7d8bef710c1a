//! Determinant states of basis families and Metropolis sampling over m copies.
//!
//! For a family {φ_k} and a multi-configuration s = (s₁, …, s_m) the determinant
//! state amplitude is det Φ(s)/m! with Φ(s)_{ij} = ⟨s_i|φ_j⟩.

use std::fmt;

use log::{debug, warn};
use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{det_lu, factorial, ZERO};
use crate::spin_model::{OperatorTerms, SpinConfig};
use crate::state::{AmplitudeState, BasisFamily};
use crate::C64;

/// One configuration per Hilbert-space copy; copy i feeds row i of Φ(s).
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiConfig {
    copies: Vec<SpinConfig>,
}

impl MultiConfig {
    pub fn new(copies: Vec<SpinConfig>) -> Result<Self> {
        let n = copies
            .first()
            .ok_or_else(|| Error::Invalid("multi-configuration needs at least one copy".into()))?
            .n();
        for c in &copies {
            c.check_sites(n)?;
        }
        Ok(Self { copies })
    }

    pub fn m(&self) -> usize {
        self.copies.len()
    }

    pub fn n(&self) -> usize {
        self.copies[0].n()
    }

    pub fn copies(&self) -> &[SpinConfig] {
        &self.copies
    }

    pub fn copy(&self, i: usize) -> SpinConfig {
        self.copies[i]
    }

    pub fn swapped(&self, i: usize, j: usize) -> Self {
        let mut copies = self.copies.clone();
        copies.swap(i, j);
        Self { copies }
    }

    /// Index in the enumeration of all (2^n)^m multi-configurations, copy 0 fastest.
    pub fn index(&self) -> usize {
        let dim = 1usize << self.n();
        self.copies.iter().rev().fold(0, |acc, c| acc * dim + c.index())
    }

    /// Every multi-configuration of `m` copies of `n` sites in [`MultiConfig::index`] order.
    pub fn all(n: usize, m: usize) -> impl Iterator<Item = MultiConfig> {
        let dim = 1usize << n;
        let total = dim.pow(m as u32);
        (0..total).map(move |mut idx| {
            let copies = (0..m)
                .map(|_| {
                    let c = SpinConfig::from_index_unchecked(n, idx % dim);
                    idx /= dim;
                    c
                })
                .collect();
            MultiConfig { copies }
        })
    }
}

impl fmt::Debug for MultiConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MultiConfig({self})")
    }
}

impl fmt::Display for MultiConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, c) in self.copies.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{c}")?;
        }
        f.write_str(")")
    }
}

fn check_family_config(family: &BasisFamily, s: &MultiConfig) -> Result<()> {
    if family.m() != s.m() {
        return Err(Error::Dimension(format!(
            "family has {} members but configuration has {} copies",
            family.m(),
            s.m()
        )));
    }
    s.copy(0).check_sites(family.n())
}

/// Φ(s)_{ij} = ⟨s_i|φ_j⟩.
pub fn phi_matrix(family: &BasisFamily, s: &MultiConfig) -> DMatrix<C64> {
    let m = family.m();
    let mut phi = DMatrix::from_element(m, m, ZERO);
    for (i, &si) in s.copies().iter().enumerate() {
        for (j, member) in family.members().iter().enumerate() {
            phi[(i, j)] = member.amp(si);
        }
    }
    phi
}

/// Φ^(O)(s)_{ij} = ⟨s_i|O|φ_j⟩.
pub fn phi_op_matrix(family: &BasisFamily, op: &OperatorTerms, s: &MultiConfig) -> DMatrix<C64> {
    let m = family.m();
    let mut out = DMatrix::from_element(m, m, ZERO);
    for (i, &si) in s.copies().iter().enumerate() {
        for (j, member) in family.members().iter().enumerate() {
            out[(i, j)] = member.local_row_unchecked(op, si);
        }
    }
    out
}

/// det Φ(s) without the 1/m! factor.
pub(crate) fn det_phi(phi: DMatrix<C64>) -> C64 {
    if phi.nrows() == 1 {
        phi[(0, 0)]
    } else {
        det_lu(phi)
    }
}

/// ⟨s|φ_A⟩ = det Φ(s)/m!.
pub fn det_amplitude(family: &BasisFamily, s: &MultiConfig) -> Result<C64> {
    check_family_config(family, s)?;
    Ok(det_phi(phi_matrix(family, s)) / factorial(family.m()))
}

/// New family with member p equal to Σ_k B_{kp}·φ_k.
pub fn change_basis(family: &BasisFamily, b: &DMatrix<C64>) -> Result<BasisFamily> {
    let m = family.m();
    if b.nrows() != m || b.ncols() != m {
        return Err(Error::Dimension(format!(
            "change of basis is {}x{}, family has {m} members",
            b.nrows(),
            b.ncols()
        )));
    }
    let members = (0..m)
        .map(|p| {
            let col: Vec<C64> = b.column(p).iter().copied().collect();
            let v = family.combine(&col)?;
            AmplitudeState::from_vector(family.n(), &v, format!("changed {p}"))
        })
        .collect::<Result<Vec<_>>>()?;
    BasisFamily::new(members)
}

/// Local Rayleigh matrix Φ(s)⁻¹Φ^(O)(s), solved by pivoted LU.
pub fn local_rayleigh(family: &BasisFamily, op: &OperatorTerms, s: &MultiConfig) -> Result<DMatrix<C64>> {
    check_family_config(family, s)?;
    if op.n() != family.n() {
        return Err(Error::SiteMismatch {
            expected: family.n(),
            got: op.n(),
        });
    }
    local_rayleigh_unchecked(family, op, s)
        .ok_or_else(|| Error::Singular(format!("Φ(s) is singular at {s}")))
}

pub(crate) fn local_rayleigh_unchecked(
    family: &BasisFamily,
    op: &OperatorTerms,
    s: &MultiConfig,
) -> Option<DMatrix<C64>> {
    let phi = phi_matrix(family, s);
    let rhs = phi_op_matrix(family, op, s);
    if phi.nrows() == 1 {
        // plain local energy; keeps m = 1 bitwise identical to single-state VMC
        let a = phi[(0, 0)];
        return (a != ZERO).then(|| DMatrix::from_element(1, 1, rhs[(0, 0)] / a));
    }
    let x = phi.lu().solve(&rhs)?;
    x.iter()
        .all(|z| z.re.is_finite() && z.im.is_finite())
        .then_some(x)
}

/// Move set of the m-copy chain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Proposal {
    /// Pick a copy and a site uniformly and flip that spin.
    SingleCopySingleFlip,
    /// As above, but with probability `swap_probability` exchange two copies
    /// instead. The target density is invariant under copy exchange, so the
    /// move is always accepted; it connects sectors that single flips cannot
    /// (e.g. one site per copy with orthogonal basis vectors).
    SingleFlipWithCopySwap { swap_probability: f64 },
}

impl Default for Proposal {
    fn default() -> Self {
        Proposal::SingleFlipWithCopySwap {
            swap_probability: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetSamplerConfig {
    pub n_chains: usize,
    pub n_samples_per_chain: usize,
    /// Proposals discarded before the first retained sample; `None` means 10·n·m.
    pub burn_in: Option<usize>,
    /// Proposals between retained samples (0 and 1 both keep every proposal).
    pub thin: usize,
    pub seed: u64,
    pub proposal: Proposal,
}

impl Default for DetSamplerConfig {
    fn default() -> Self {
        Self {
            n_chains: 8,
            n_samples_per_chain: 1000,
            burn_in: None,
            thin: 1,
            seed: 0,
            proposal: Proposal::default(),
        }
    }
}

impl DetSamplerConfig {
    pub fn new(n_chains: usize, n_samples_per_chain: usize, seed: u64) -> Self {
        Self {
            n_chains,
            n_samples_per_chain,
            seed,
            ..Self::default()
        }
    }

    pub fn with_thin(mut self, thin: usize) -> Self {
        self.thin = thin;
        self
    }

    pub fn with_burn_in(mut self, burn_in: usize) -> Self {
        self.burn_in = Some(burn_in);
        self
    }

    pub fn with_proposal(mut self, proposal: Proposal) -> Self {
        self.proposal = proposal;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 || self.n_samples_per_chain == 0 {
            return Err(Error::Invalid("chain and sample counts must be at least 1".into()));
        }
        if let Proposal::SingleFlipWithCopySwap { swap_probability } = self.proposal {
            if !(0.0..1.0).contains(&swap_probability) {
                return Err(Error::Invalid("swap probability must lie in [0, 1)".into()));
            }
        }
        Ok(())
    }

    pub fn total_samples(&self) -> usize {
        self.n_chains * self.n_samples_per_chain
    }

    fn burn_in_for(&self, n: usize, m: usize) -> usize {
        self.burn_in.unwrap_or(10 * n * m)
    }
}

/// Per-chain bookkeeping, serialised into the sampler diagnostics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub chain: usize,
    /// ChaCha stream index under the master seed.
    pub stream: u64,
    pub proposals: usize,
    pub accepted: usize,
    pub acceptance_rate: f64,
    pub retained: usize,
    pub skipped_singular: usize,
    pub start_attempts: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SamplerDiagnostics {
    pub master_seed: u64,
    pub chains: Vec<ChainDiagnostics>,
}

impl SamplerDiagnostics {
    pub fn skipped_singular(&self) -> usize {
        self.chains.iter().map(|c| c.skipped_singular).sum()
    }

    pub fn retained(&self) -> usize {
        self.chains.iter().map(|c| c.retained).sum()
    }

    pub fn acceptance_rate(&self) -> f64 {
        let p: usize = self.chains.iter().map(|c| c.proposals).sum();
        let a: usize = self.chains.iter().map(|c| c.accepted).sum();
        if p == 0 {
            0.0
        } else {
            a as f64 / p as f64
        }
    }
}

/// An unnormalized density over multi-configurations.
pub(crate) trait ChainTarget: Sync {
    fn n(&self) -> usize;
    fn copies(&self) -> usize;
    fn weight(&self, s: &MultiConfig) -> f64;
    /// Deterministic start used when random starts all have zero weight.
    fn fallback_start(&self) -> Option<MultiConfig>;
}

/// |det Φ(s)|² of a family.
pub(crate) struct DetTarget<'a>(pub &'a BasisFamily);

impl ChainTarget for DetTarget<'_> {
    fn n(&self) -> usize {
        self.0.n()
    }

    fn copies(&self) -> usize {
        self.0.m()
    }

    fn weight(&self, s: &MultiConfig) -> f64 {
        (det_phi(phi_matrix(self.0, s)) / factorial(self.0.m())).norm_sqr()
    }

    /// Rows chosen by partial pivoting on the dim×m amplitude matrix.
    fn fallback_start(&self) -> Option<MultiConfig> {
        let mut a = self.0.to_matrix();
        let (dim, m) = a.shape();
        let mut rows = Vec::with_capacity(m);
        let mut used = vec![false; dim];
        for k in 0..m {
            let (best, val) = (0..dim)
                .filter(|&r| !used[r])
                .map(|r| (r, a[(r, k)].norm()))
                .fold((usize::MAX, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if best == usize::MAX || val == 0.0 {
                return None;
            }
            used[best] = true;
            rows.push(best);
            let pivot = a[(best, k)];
            for r in 0..dim {
                if used[r] {
                    continue;
                }
                let f = a[(r, k)] / pivot;
                if f != ZERO {
                    for c in k..m {
                        let sub = a[(best, c)] * f;
                        a[(r, c)] -= sub;
                    }
                }
            }
        }
        let n = self.0.n();
        let copies = rows.into_iter().map(|r| SpinConfig::from_index_unchecked(n, r)).collect();
        Some(MultiConfig { copies })
    }
}

/// Σ_k |⟨s|φ_k⟩|² over a single copy.
pub(crate) struct SumTarget<'a>(pub &'a BasisFamily);

impl ChainTarget for SumTarget<'_> {
    fn n(&self) -> usize {
        self.0.n()
    }

    fn copies(&self) -> usize {
        1
    }

    fn weight(&self, s: &MultiConfig) -> f64 {
        let c = s.copy(0);
        self.0.members().iter().map(|m| m.amp(c).norm_sqr()).sum()
    }

    fn fallback_start(&self) -> Option<MultiConfig> {
        let n = self.0.n();
        let (best, w) = SpinConfig::all(n)
            .map(|c| (c, self.weight(&MultiConfig { copies: vec![c] })))
            .fold((None, 0.0), |acc, x| if x.1 > acc.1 { (Some(x.0), x.1) } else { acc });
        (w > 0.0).then(|| MultiConfig {
            copies: vec![best.unwrap()],
        })
    }
}

const START_RETRIES: usize = 64;

/// Run one Metropolis chain and feed each retained sample to `visit`, which
/// returns false when the sample had to be skipped (singular Φ).
pub(crate) fn run_chain<T: ChainTarget>(
    target: &T,
    cfg: &DetSamplerConfig,
    chain: usize,
    mut visit: impl FnMut(&MultiConfig) -> bool,
) -> Result<ChainDiagnostics> {
    let n = target.n();
    let m = target.copies();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(chain as u64);

    let mut current = None;
    let mut attempts = 0;
    for _ in 0..START_RETRIES {
        attempts += 1;
        let copies = (0..m)
            .map(|_| SpinConfig::from_index_unchecked(n, rng.gen_range(0..1usize << n)))
            .collect();
        let s = MultiConfig { copies };
        let w = target.weight(&s);
        if w > 0.0 && w.is_finite() {
            current = Some((s, w));
            break;
        }
    }
    if current.is_none() {
        debug!("chain {chain}: no random start with nonzero weight, using pivoted start");
        attempts += 1;
        current = target
            .fallback_start()
            .map(|s| {
                let w = target.weight(&s);
                (s, w)
            })
            .filter(|(_, w)| *w > 0.0 && w.is_finite());
    }
    let (mut s, mut w) = current.ok_or_else(|| {
        Error::Sampler("no configuration with nonzero amplitude found to start the chain".into())
    })?;

    let swap_p = match cfg.proposal {
        Proposal::SingleFlipWithCopySwap { swap_probability } if m > 1 => swap_probability,
        _ => 0.0,
    };
    let mut diag = ChainDiagnostics {
        chain,
        stream: chain as u64,
        start_attempts: attempts,
        ..Default::default()
    };
    let mut step = |s: &mut MultiConfig, w: &mut f64, diag: &mut ChainDiagnostics| {
        let proposal = if swap_p > 0.0 && rng.gen::<f64>() < swap_p {
            let i = rng.gen_range(0..m);
            let mut j = rng.gen_range(0..m - 1);
            if j >= i {
                j += 1;
            }
            s.swapped(i, j)
        } else {
            let copy = if m == 1 { 0 } else { rng.gen_range(0..m) };
            let site = rng.gen_range(0..n);
            let mut p = s.clone();
            p.copies[copy] = p.copies[copy].flip(site);
            p
        };
        let wp = target.weight(&proposal);
        diag.proposals += 1;
        let ratio = wp / *w;
        if ratio.is_finite() && wp > 0.0 && (ratio >= 1.0 || rng.gen::<f64>() < ratio) {
            *s = proposal;
            *w = wp;
            diag.accepted += 1;
        }
    };

    for _ in 0..cfg.burn_in_for(n, m) {
        step(&mut s, &mut w, &mut diag);
    }
    let stride = cfg.thin.max(1);
    for _ in 0..cfg.n_samples_per_chain {
        for _ in 0..stride {
            step(&mut s, &mut w, &mut diag);
        }
        if visit(&s) {
            diag.retained += 1;
        } else {
            diag.skipped_singular += 1;
        }
    }
    diag.acceptance_rate = diag.accepted as f64 / diag.proposals.max(1) as f64;
    if diag.skipped_singular > 0 {
        warn!(
            "chain {chain}: skipped {} samples with singular Φ(s)",
            diag.skipped_singular
        );
    }
    Ok(diag)
}

/// Runs `cfg.n_chains` chains in parallel with one accumulator each. Results are
/// returned in chain order, so reductions over them are seed-deterministic.
pub(crate) fn run_chains<T, A, F, V>(
    target: &T,
    cfg: &DetSamplerConfig,
    make: F,
    visit: V,
) -> Result<(Vec<A>, SamplerDiagnostics)>
where
    T: ChainTarget,
    A: Send,
    F: Fn() -> A + Sync,
    V: Fn(&mut A, &MultiConfig) -> bool + Sync,
{
    cfg.validate()?;
    let results: Vec<Result<(A, ChainDiagnostics)>> = (0..cfg.n_chains)
        .into_par_iter()
        .map(|chain| {
            let mut acc = make();
            let d = run_chain(target, cfg, chain, |s| visit(&mut acc, s))?;
            Ok((acc, d))
        })
        .collect();
    let mut accs = Vec::with_capacity(cfg.n_chains);
    let mut diags = SamplerDiagnostics {
        master_seed: cfg.seed,
        chains: Vec::with_capacity(cfg.n_chains),
    };
    for r in results {
        let (a, d) = r?;
        accs.push(a);
        diags.chains.push(d);
    }
    Ok((accs, diags))
}

/// Retained samples of every chain, in chain order.
#[derive(Clone, Debug)]
pub struct SampleSet {
    pub chains: Vec<Vec<MultiConfig>>,
    pub diagnostics: SamplerDiagnostics,
}

impl SampleSet {
    pub fn iter(&self) -> impl Iterator<Item = &MultiConfig> {
        self.chains.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.chains.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Metropolis–Hastings samples from p(s) ∝ |det Φ(s)|².
pub fn sample_chain(family: &BasisFamily, cfg: &DetSamplerConfig) -> Result<SampleSet> {
    let (chains, diagnostics) = run_chains(
        &DetTarget(family),
        cfg,
        Vec::new,
        |acc: &mut Vec<MultiConfig>, s| {
            acc.push(s.clone());
            true
        },
    )?;
    Ok(SampleSet {
        chains,
        diagnostics,
    })
}
