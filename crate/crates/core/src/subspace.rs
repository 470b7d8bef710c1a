//! Subspace distance, Ritz spectra and vectors, observables on Ritz vectors, and
//! ground-state interpolation across Hamiltonian parameters.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::det_state::{det_phi, phi_matrix, run_chains, DetSamplerConfig, DetTarget, MultiConfig, SamplerDiagnostics};
use crate::error::{Error, Result};
use crate::linalg::{
    generalized_hermitian, lu_solve, orthonormal_columns, serde_cmat, serde_cvec, GeneralEigen, ZERO,
};
use crate::rayleigh::{solve_gram, AssemblyPolicy, GramPack, MatrixAccumulator, MatrixStats, Provenance, RayleighEstimate};
use crate::state::{AmplitudeState, BasisFamily};
use crate::C64;

/// Relative tolerance for rank deficiency when orthonormalizing a family.
pub const RANK_TOL: f64 = 1e-12;

fn check_pair(u: &BasisFamily, v: &BasisFamily) -> Result<()> {
    if u.n() != v.n() {
        return Err(Error::SiteMismatch {
            expected: u.n(),
            got: v.n(),
        });
    }
    if u.m() != v.m() {
        return Err(Error::Dimension(format!(
            "families have {} and {} members",
            u.m(),
            v.m()
        )));
    }
    Ok(())
}

fn distance_from_fidelity(f: f64) -> f64 {
    f.clamp(0.0, 1.0).sqrt().acos().clamp(0.0, FRAC_PI_2)
}

/// Fubini–Study distance between the spans of two families, computed from
/// orthonormalized bases as arccos √|det S|² with S = Q_U†Q_V.
pub fn subspace_distance_exact(u: &BasisFamily, v: &BasisFamily) -> Result<f64> {
    check_pair(u, v)?;
    let qu = orthonormal_columns(&u.to_matrix(), RANK_TOL)?;
    let qv = orthonormal_columns(&v.to_matrix(), RANK_TOL)?;
    let s = qu.adjoint() * qv;
    Ok(distance_from_fidelity(s.determinant().norm_sqr()))
}

/// Monte Carlo distance with its standard error.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DistanceEstimate {
    pub distance: f64,
    pub std_error: f64,
    pub fidelity: f64,
    pub fidelity_error: f64,
    pub u_diagnostics: SamplerDiagnostics,
    pub v_diagnostics: SamplerDiagnostics,
}

/// Seed offset for the chain sampling the second family.
const SECOND_CHAIN_SEED: u64 = 0x9E37_79B9_7F4A_7C15;

fn ratio_mean(
    from: &BasisFamily,
    to: &BasisFamily,
    cfg: &DetSamplerConfig,
) -> Result<(C64, f64, SamplerDiagnostics)> {
    let (accs, diags) = run_chains(
        &DetTarget(from),
        cfg,
        || MatrixAccumulator::new(1, 1, cfg.n_samples_per_chain),
        |acc: &mut MatrixAccumulator, s: &MultiConfig| {
            let den = det_phi(phi_matrix(from, s));
            if den == ZERO {
                return false;
            }
            let r = det_phi(phi_matrix(to, s)) / den;
            acc.push(&DMatrix::from_element(1, 1, r));
            true
        },
    )?;
    let st = MatrixStats::reduce(accs.iter())?;
    Ok((st.mean[(0, 0)], st.std_error[(0, 0)], diags))
}

/// Product of the two cross-ratio chain means E_U[det Φ_V/det Φ_U]·E_V[det Φ_U/det Φ_V],
/// mapped to a distance by arccos of its modulus root. The V chain uses
/// `cfg.seed` offset by a fixed constant.
pub fn subspace_distance_mc(u: &BasisFamily, v: &BasisFamily, cfg: &DetSamplerConfig) -> Result<DistanceEstimate> {
    check_pair(u, v)?;
    let (e1, s1, du) = ratio_mean(u, v, cfg)?;
    let cfg_v = DetSamplerConfig {
        seed: cfg.seed.wrapping_add(SECOND_CHAIN_SEED),
        ..cfg.clone()
    };
    let (e2, s2, dv) = ratio_mean(v, u, &cfg_v)?;
    let f = (e1 * e2).norm();
    let sf = (e2.norm_sqr() * s1 * s1 + e1.norm_sqr() * s2 * s2).sqrt();
    let fc = f.clamp(0.0, 1.0);
    let slope = 2.0 * (fc * (1.0 - fc)).sqrt();
    // near F = 1 the linearized error diverges; d ≈ √(1−F) bounds it there
    let sd = if slope > 0.0 { (sf / slope).min(sf.sqrt()) } else { sf.sqrt() };
    Ok(DistanceEstimate {
        distance: distance_from_fidelity(f),
        std_error: sd,
        fidelity: f,
        fidelity_error: sf,
        u_diagnostics: du,
        v_diagnostics: dv,
    })
}

/// Two-state Fubini–Study distance estimated from the same pair of chains.
pub fn state_distance_mc(a: &AmplitudeState, b: &AmplitudeState, cfg: &DetSamplerConfig) -> Result<DistanceEstimate> {
    subspace_distance_mc(
        &BasisFamily::new(vec![a.clone()])?,
        &BasisFamily::new(vec![b.clone()])?,
        cfg,
    )
}

/// Ritz values and coefficient vectors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RitzResult {
    pub values: Vec<f64>,
    /// Imaginary parts of the eigenvalues (zero on the Hermitian path).
    pub imag: Vec<f64>,
    /// Column k is α^(k).
    #[serde(with = "serde_cmat")]
    pub vectors: DMatrix<C64>,
}

impl RitzResult {
    pub fn m(&self) -> usize {
        self.values.len()
    }

    pub fn vector(&self, k: usize) -> Vec<C64> {
        self.vectors.column(k).iter().copied().collect()
    }

    /// Smallest gap between consecutive Ritz values relative to the spread.
    pub fn min_relative_gap(&self) -> f64 {
        let scale = self.values.iter().map(|v| v.abs()).fold(1.0, f64::max);
        self.values
            .windows(2)
            .map(|w| (w[1] - w[0]) / scale)
            .fold(f64::INFINITY, f64::min)
    }
}

fn ritz_from_general(m: &DMatrix<C64>) -> Result<RitzResult> {
    let eig = GeneralEigen::new(m)?.sorted_by_real();
    Ok(RitzResult {
        values: eig.values.iter().map(|z| z.re).collect(),
        imag: eig.values.iter().map(|z| z.im).collect(),
        vectors: eig.vectors,
    })
}

/// Exact packs: Hermitian generalized problem G^(H)α = μGα with G-orthonormal
/// vectors. Sampled packs: eigendecomposition of M = G⁻¹G^(H) assembled by `policy`.
pub fn ritz_spectrum(pack: &GramPack, label: &str, policy: AssemblyPolicy) -> Result<RitzResult> {
    let gh = pack.op(label)?;
    if pack.provenance == Provenance::Exact {
        let (values, vectors) = generalized_hermitian(gh, &pack.g)?;
        return Ok(RitzResult {
            imag: vec![0.0; values.len()],
            values,
            vectors,
        });
    }
    ritz_from_general(&solve_gram(&pack.g, gh, policy)?)
}

/// Ritz decomposition of an already assembled Rayleigh matrix.
pub fn ritz_from_estimate(est: &RayleighEstimate) -> Result<RitzResult> {
    ritz_from_general(&est.matrix)
}

/// Per-Ritz-vector averages of A: diag(P⁻¹·G⁻¹G^(A)·P) in Ritz order.
pub fn ritz_observable(pack: &GramPack, h_label: &str, a_label: &str, policy: AssemblyPolicy) -> Result<(RitzResult, Vec<f64>)> {
    let ritz = ritz_spectrum(pack, h_label, policy)?;
    if ritz.m() > 1 && ritz.min_relative_gap() <= 1e-10 {
        return Err(Error::Numerical(
            "degenerate Ritz values: per-vector averages are ill-defined; \
             use the ratio α†G^(A)α/α†Gα on explicitly chosen vectors instead"
                .into(),
        ));
    }
    let ma = solve_gram(&pack.g, pack.op(a_label)?, policy)?;
    let rotated = lu_solve(&ritz.vectors, &(ma * &ritz.vectors))?;
    let values = (0..ritz.m()).map(|k| rotated[(k, k)].re).collect();
    Ok((ritz, values))
}

/// Σ_k α_k φ_k as a state.
pub fn reconstruct(family: &BasisFamily, alpha: &[C64]) -> Result<AmplitudeState> {
    let v = family.combine(alpha)?;
    AmplitudeState::from_vector(family.n(), &v, "linear combination")
}

/// Lowest Ritz pair of M(γ) = Σ_p γ_p M_p at one query point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InterpolationResult {
    pub gamma: Vec<f64>,
    pub mu0: f64,
    pub mu0_imag: f64,
    #[serde(with = "serde_cvec")]
    pub alpha: Vec<C64>,
    /// α†Gα in the pack's scale convention.
    pub norm: f64,
    /// All Ritz values (real parts), ascending.
    pub ritz_values: Vec<f64>,
}

/// Cached per-part Rayleigh matrices M_p = G⁻¹G^(H_p) sharing one Gram matrix.
#[derive(Clone, Debug)]
pub struct GroundStateInterpolator {
    labels: Vec<String>,
    g: DMatrix<C64>,
    parts: Vec<DMatrix<C64>>,
}

impl GroundStateInterpolator {
    /// Collects `labels` from `packs`. All packs must come from the same family
    /// with the same scale convention: identical G, identical provenance.
    pub fn new(packs: &[&GramPack], labels: &[&str], policy: AssemblyPolicy) -> Result<Self> {
        let first = packs
            .first()
            .ok_or_else(|| Error::Invalid("at least one Gram pack is required".into()))?;
        for p in &packs[1..] {
            if p.provenance != first.provenance || p.scale_known != first.scale_known || p.g != first.g {
                return Err(Error::Invalid(
                    "mixed-scale packs: all parts must come from one exact computation or one sum-of-states run"
                        .into(),
                ));
            }
        }
        let mut parts = Vec::with_capacity(labels.len());
        for label in labels {
            let gh = packs
                .iter()
                .find_map(|p| p.ops.get(*label))
                .ok_or_else(|| Error::Invalid(format!("no pack holds part '{label}'")))?;
            parts.push(solve_gram(&first.g, &gh.value, policy)?);
        }
        Ok(Self {
            labels: labels.iter().map(|s| s.to_string()).collect(),
            g: first.g.clone(),
            parts,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn rayleigh_at(&self, gamma: &[f64]) -> Result<DMatrix<C64>> {
        if gamma.len() != self.parts.len() {
            return Err(Error::Dimension(format!(
                "{} coefficients for {} parts",
                gamma.len(),
                self.parts.len()
            )));
        }
        let m = self.g.nrows();
        let mut out = DMatrix::from_element(m, m, ZERO);
        for (gp, mp) in gamma.iter().zip(&self.parts) {
            out += mp * C64::new(*gp, 0.0);
        }
        Ok(out)
    }

    pub fn query(&self, gamma: &[f64]) -> Result<InterpolationResult> {
        let ritz = ritz_from_general(&self.rayleigh_at(gamma)?)?;
        let alpha = DVector::from_iterator(ritz.m(), ritz.vectors.column(0).iter().copied());
        let norm = (alpha.adjoint() * &self.g * &alpha)[(0, 0)].re;
        Ok(InterpolationResult {
            gamma: gamma.to_vec(),
            mu0: ritz.values[0],
            mu0_imag: ritz.imag[0],
            alpha: alpha.iter().copied().collect(),
            norm,
            ritz_values: ritz.values,
        })
    }
}

/// One-shot interpolation at several query points.
pub fn interpolate_ground_state(
    packs: &[&GramPack],
    labels: &[&str],
    queries: &[Vec<f64>],
    policy: AssemblyPolicy,
) -> Result<Vec<InterpolationResult>> {
    let interp = GroundStateInterpolator::new(packs, labels, policy)?;
    queries.iter().map(|g| interp.query(g)).collect()
}
