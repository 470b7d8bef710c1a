//! Rayleigh-matrix estimators: the determinant-state estimator, which returns
//! M = G⁻¹G^(O) directly, and the sum-of-states estimator, which returns G and
//! G^(O) up to a common unknown factor.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::det_state::{
    det_phi, local_rayleigh_unchecked, phi_matrix, run_chains, DetSamplerConfig, DetTarget, MultiConfig,
    SamplerDiagnostics, SumTarget,
};
use crate::error::{Error, Result};
use crate::linalg::{pinv, serde_cmat, serde_cvec, GeneralEigen, ZERO};
use crate::spin_model::{OperatorTerms, SpinConfig};
use crate::state::{AmplitudeState, BasisFamily};
use crate::xprec::{
    bits_for_digits, xp_dot_conj, xp_solve, xp_vec, XComplex, XComplexMatrix, DEFAULT_DIGITS, MIN_DIGITS,
};
use crate::C64;

/// Batches per chain used for the standard error of the mean.
const BATCHES_PER_CHAIN: usize = 10;

/// Running sums of matrix-valued samples, split into contiguous batches, with a
/// Welford mean and squared-deviation sum for the per-sample spread.
#[derive(Clone, Debug)]
pub(crate) struct MatrixAccumulator {
    batch_size: usize,
    batches: Vec<(DMatrix<C64>, usize)>,
    running_mean: DMatrix<C64>,
    m2: DMatrix<f64>,
    count: usize,
}

impl MatrixAccumulator {
    pub(crate) fn new(rows: usize, cols: usize, expected: usize) -> Self {
        Self {
            batch_size: expected.div_ceil(BATCHES_PER_CHAIN).max(1),
            batches: Vec::new(),
            running_mean: DMatrix::from_element(rows, cols, ZERO),
            m2: DMatrix::zeros(rows, cols),
            count: 0,
        }
    }

    pub(crate) fn push(&mut self, x: &DMatrix<C64>) {
        if self.count % self.batch_size == 0 {
            self.batches.push((DMatrix::from_element(x.nrows(), x.ncols(), ZERO), 0));
        }
        let (sum, n) = self.batches.last_mut().unwrap();
        *sum += x;
        *n += 1;
        self.count += 1;
        let d = x - &self.running_mean;
        self.running_mean += &d / C64::new(self.count as f64, 0.0);
        let w = (self.count - 1) as f64 / self.count as f64;
        self.m2 += d.map(|z| z.norm_sqr() * w);
    }
}

/// Mean of matrix samples with batch-means standard errors and per-sample spread.
#[derive(Clone, Debug)]
pub(crate) struct MatrixStats {
    pub mean: DMatrix<C64>,
    pub std_error: DMatrix<f64>,
    pub sample_std: DMatrix<f64>,
    pub count: usize,
}

impl MatrixStats {
    pub(crate) fn reduce<'a>(accs: impl IntoIterator<Item = &'a MatrixAccumulator> + Clone) -> Result<Self> {
        let mut total: Option<DMatrix<C64>> = None;
        // pairwise combination of (count, mean, m2) in chain order
        let mut spread: Option<(usize, DMatrix<C64>, DMatrix<f64>)> = None;
        let mut count = 0;
        for acc in accs.clone() {
            for (s, _) in &acc.batches {
                total = Some(match total {
                    None => s.clone(),
                    Some(t) => t + s,
                });
            }
            if acc.count > 0 {
                spread = Some(match spread {
                    None => (acc.count, acc.running_mean.clone(), acc.m2.clone()),
                    Some((na, ma, m2a)) => {
                        let nb = acc.count;
                        let n = na + nb;
                        let d = &acc.running_mean - &ma;
                        let w = (na * nb) as f64 / n as f64;
                        let mean = &ma + &d * C64::new(nb as f64 / n as f64, 0.0);
                        (n, mean, m2a + &acc.m2 + d.map(|z| z.norm_sqr() * w))
                    }
                });
            }
            count += acc.count;
        }
        let total = total
            .filter(|_| count > 0)
            .ok_or_else(|| Error::Sampler("no usable samples".into()))?;
        let mean = total / C64::new(count as f64, 0.0);
        let sample_std = spread.unwrap().2.map(|v| (v / count as f64).sqrt());
        let batch_means: Vec<DMatrix<C64>> = accs
            .into_iter()
            .flat_map(|a| a.batches.iter())
            .filter(|(_, n)| *n > 0)
            .map(|(s, n)| s / C64::new(*n as f64, 0.0))
            .collect();
        let b = batch_means.len();
        let std_error = if b >= 2 {
            let mut var = DMatrix::<f64>::zeros(mean.nrows(), mean.ncols());
            for bm in &batch_means {
                var += (bm - &mean).map(|z| z.norm_sqr());
            }
            var.map(|v| (v / (b * (b - 1)) as f64).sqrt())
        } else {
            sample_std.map(|s| s / (count as f64).sqrt())
        };
        Ok(Self {
            mean,
            std_error,
            sample_std,
            count,
        })
    }
}

/// How M = G⁻¹G^(O) is formed from a Gram pack.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum AssemblyPolicy {
    /// Sample mean of Φ⁻¹Φ^(O) (determinant-state estimator only).
    DirectMean,
    /// Solve in extended precision with the given number of decimal digits.
    Xp { digits: u32 },
    /// Truncated-SVD pseudo-inverse of G.
    Pinv { rcond: f64 },
}

impl Default for AssemblyPolicy {
    fn default() -> Self {
        AssemblyPolicy::Xp {
            digits: DEFAULT_DIGITS,
        }
    }
}

impl fmt::Display for AssemblyPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AssemblyPolicy::DirectMean => f.write_str("direct"),
            AssemblyPolicy::Xp { digits } => write!(f, "xp:{digits}"),
            AssemblyPolicy::Pinv { rcond } => write!(f, "pinv:{rcond:e}"),
        }
    }
}

impl FromStr for AssemblyPolicy {
    type Err = Error;

    /// Accepts `direct`, `xp`, `xp:<digits>`, `pinv` and `pinv:<rcond>`.
    fn from_str(s: &str) -> Result<Self> {
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let bad = || Error::Invalid(format!("bad assembly policy '{s}'"));
        match head {
            "direct" if arg.is_none() => Ok(AssemblyPolicy::DirectMean),
            "xp" => {
                let digits = arg.map_or(Ok(DEFAULT_DIGITS), |a| a.parse().map_err(|_| bad()))?;
                if digits < MIN_DIGITS {
                    return Err(Error::Invalid(format!(
                        "extended precision needs at least {MIN_DIGITS} digits, got {digits}"
                    )));
                }
                Ok(AssemblyPolicy::Xp { digits })
            }
            "pinv" => {
                let rcond: f64 = arg.map_or(Ok(1e-12), |a| a.parse().map_err(|_| bad()))?;
                if !(rcond.is_finite() && rcond >= 0.0) {
                    return Err(bad());
                }
                Ok(AssemblyPolicy::Pinv { rcond })
            }
            _ => Err(bad()),
        }
    }
}

/// Treatment of the imaginary parts of Rayleigh-matrix eigenvalues.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImagPolicy {
    #[default]
    Keep,
    /// Drop imaginary parts; a warning is logged when any exceeds the tolerance.
    DiscardEigImag,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Exact,
    SumOfStates,
}

/// G_{ij} = ⟨φ_i|φ_j⟩ and G^(O)_{ij} = ⟨φ_i|O|φ_j⟩ for a set of labelled operators.
///
/// Sum-of-states packs carry a common unknown factor 1/‖p‖ (`scale_known` false);
/// only quotients such as G⁻¹G^(O) are meaningful for them.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GramPack {
    #[serde(with = "serde_cmat")]
    pub g: DMatrix<C64>,
    pub ops: BTreeMap<String, Labelled>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_error: Option<Labelled>,
    pub scale_known: bool,
    pub provenance: Provenance,
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<SamplerDiagnostics>,
}

/// A matrix with optional element-wise standard errors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Labelled {
    #[serde(with = "serde_cmat")]
    pub value: DMatrix<C64>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_rmat")]
    pub std_error: Option<DMatrix<f64>>,
}

mod opt_rmat {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(a: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
        a.as_ref()
            .map(|m| m.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>())
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DMatrix<f64>>, D::Error> {
        let rows = Option::<Vec<Vec<f64>>>::deserialize(d)?;
        Ok(rows.map(|rows| {
            let nc = rows.first().map_or(0, Vec::len);
            DMatrix::from_fn(rows.len(), nc, |i, j| rows[i].get(j).copied().unwrap_or(f64::NAN))
        }))
    }
}

impl GramPack {
    pub fn m(&self) -> usize {
        self.g.nrows()
    }

    pub fn op(&self, label: &str) -> Result<&DMatrix<C64>> {
        self.ops
            .get(label)
            .map(|l| &l.value)
            .ok_or_else(|| Error::Invalid(format!("Gram pack has no operator labelled '{label}'")))
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.ops.keys().map(String::as_str)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let pack: Self = serde_json::from_str(s)?;
        let m = pack.g.nrows();
        if pack.g.ncols() != m || pack.ops.values().any(|o| o.value.shape() != (m, m)) {
            return Err(Error::Format("Gram pack matrices must all be m×m".into()));
        }
        Ok(pack)
    }
}

fn check_ops(family: &BasisFamily, ops: &[(&str, &OperatorTerms)]) -> Result<()> {
    for (label, op) in ops {
        if op.n() != family.n() {
            return Err(Error::SiteMismatch {
                expected: family.n(),
                got: op.n(),
            });
        }
        if label.is_empty() {
            return Err(Error::Invalid("operator labels must be non-empty".into()));
        }
    }
    let mut seen: Vec<&str> = ops.iter().map(|(l, _)| *l).collect();
    seen.sort_unstable();
    if seen.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Invalid("duplicate operator label".into()));
    }
    Ok(())
}

/// Exact G and G^(O) from dense amplitude vectors.
pub fn exact_gram_pack(family: &BasisFamily, ops: &[(&str, &OperatorTerms)]) -> Result<GramPack> {
    check_ops(family, ops)?;
    let phi = family.to_matrix();
    let phi_h = phi.adjoint();
    let g = &phi_h * &phi;
    let mut out = BTreeMap::new();
    for (label, op) in ops {
        let cols: Vec<C64> = family
            .members()
            .iter()
            .flat_map(|mem| op.apply_vec(mem.amplitudes()))
            .collect();
        let ophi = DMatrix::from_vec(family.dim(), family.m(), cols);
        out.insert(
            label.to_string(),
            Labelled {
                value: &phi_h * ophi,
                std_error: None,
            },
        );
    }
    Ok(GramPack {
        g,
        ops: out,
        g_error: None,
        scale_known: true,
        provenance: Provenance::Exact,
        samples: 0,
        diagnostics: None,
    })
}

/// Exact G and G^(O) accumulated in extended precision from the stored
/// double-precision amplitudes. Near-dependent families need this: rounding G
/// to doubles perturbs its smallest singular values by ~1e-16·‖G‖, which the
/// inverse in G⁻¹G^(O) then amplifies.
#[derive(Clone, Debug)]
pub struct XGramPack {
    pub g: XComplexMatrix,
    pub ops: BTreeMap<String, XComplexMatrix>,
}

impl XGramPack {
    pub fn m(&self) -> usize {
        self.g.rows()
    }

    pub fn digits(&self) -> u32 {
        self.g.digits()
    }

    pub fn op(&self, label: &str) -> Result<&XComplexMatrix> {
        self.ops
            .get(label)
            .ok_or_else(|| Error::Invalid(format!("no operator labelled '{label}' in pack")))
    }

    /// G⁻¹G^(O) without leaving extended precision.
    pub fn rayleigh(&self, label: &str) -> Result<XComplexMatrix> {
        xp_solve(&self.g, self.op(label)?)
    }

    /// Entries rounded to doubles.
    pub fn to_gram_pack(&self) -> GramPack {
        GramPack {
            g: self.g.to_c64(),
            ops: self
                .ops
                .iter()
                .map(|(k, v)| {
                    (
                        k.clone(),
                        Labelled {
                            value: v.to_c64(),
                            std_error: None,
                        },
                    )
                })
                .collect(),
            g_error: None,
            scale_known: true,
            provenance: Provenance::Exact,
            samples: 0,
            diagnostics: None,
        }
    }
}

fn xp_gram(left: &[Vec<XComplex>], right: &[Vec<XComplex>], digits: u32) -> Result<XComplexMatrix> {
    let m = left.len();
    let prec = bits_for_digits(digits);
    let entries: Vec<XComplex> = (0..m * m)
        .into_par_iter()
        .map(|idx| xp_dot_conj(&left[idx / m], &right[idx % m], prec))
        .collect();
    let mut out = XComplexMatrix::zeros(m, m, digits)?;
    for (idx, z) in entries.into_iter().enumerate() {
        out[(idx / m, idx % m)] = z;
    }
    Ok(out)
}

/// Extended-precision counterpart of [`exact_gram_pack`]. Operator matrix
/// elements are taken as stored; only the sums are carried at `digits`.
pub fn exact_gram_pack_xp(family: &BasisFamily, ops: &[(&str, &OperatorTerms)], digits: u32) -> Result<XGramPack> {
    check_ops(family, ops)?;
    if digits < MIN_DIGITS {
        return Err(Error::Invalid(format!("at least {MIN_DIGITS} digits are required")));
    }
    let prec = bits_for_digits(digits);
    let phis: Vec<Vec<XComplex>> = family
        .members()
        .par_iter()
        .map(|mem| xp_vec(mem.amplitudes(), prec))
        .collect();
    let g = xp_gram(&phis, &phis, digits)?;
    let mut out = BTreeMap::new();
    for (label, op) in ops {
        let ophis: Vec<Vec<XComplex>> = phis.par_iter().map(|phi| xp_apply(op, phi, prec)).collect();
        out.insert(label.to_string(), xp_gram(&phis, &ophis, digits)?);
    }
    Ok(XGramPack { g, ops: out })
}

/// O·x with every accumulation at binary precision `prec`.
pub fn xp_apply(op: &OperatorTerms, x: &[XComplex], prec: u32) -> Vec<XComplex> {
    (0..x.len())
        .map(|idx| {
            let s = SpinConfig::from_index_unchecked(op.n(), idx);
            let mut acc = XComplex::zero(prec);
            op.for_each_connected(s, |sp, v| {
                let y = &x[sp.index()];
                let v = rug::Float::with_val(prec, v);
                acc.re += &y.re * &v;
                acc.im += &y.im * &v;
            });
            acc
        })
        .collect()
}

/// One sum-of-states sample: conj φ(s) ⊗ row / Σ_k |φ_k(s)|² for G and each operator.
fn sos_sample(family: &BasisFamily, ops: &[(&str, &OperatorTerms)], s: SpinConfig) -> Option<Vec<DMatrix<C64>>> {
    let a: Vec<C64> = family.amplitudes_at(s);
    let w: f64 = a.iter().map(|z| z.norm_sqr()).sum();
    if w <= 0.0 {
        return None;
    }
    let m = a.len();
    let ca = nalgebra::DVector::from_iterator(m, a.iter().map(|z| z.conj() / w));
    let row = nalgebra::RowDVector::from_row_slice(&a);
    let mut out = Vec::with_capacity(ops.len() + 1);
    out.push(&ca * row);
    for (_, op) in ops {
        let b = nalgebra::RowDVector::from_iterator(
            m,
            family.members().iter().map(|mem| mem.local_row_unchecked(op, s)),
        );
        out.push(&ca * b);
    }
    Some(out)
}

fn sos_pack(stats: Vec<MatrixStats>, ops: &[(&str, &OperatorTerms)], errors: bool) -> GramPack {
    let mut it = stats.into_iter();
    let g = it.next().unwrap();
    let samples = g.count;
    let ops = ops
        .iter()
        .zip(it)
        .map(|((label, _), st)| {
            (
                label.to_string(),
                Labelled {
                    value: st.mean,
                    std_error: errors.then_some(st.std_error),
                },
            )
        })
        .collect();
    GramPack {
        g_error: errors.then(|| Labelled {
            value: DMatrix::from_element(g.mean.nrows(), g.mean.ncols(), ZERO),
            std_error: Some(g.std_error),
        }),
        g: g.mean,
        ops,
        scale_known: false,
        provenance: Provenance::SumOfStates,
        samples,
        diagnostics: None,
    }
}

/// Monte Carlo estimate of G/‖p‖ and G^(O)/‖p‖ with p(s) ∝ Σ_k |⟨s|φ_k⟩|².
pub fn estimate_sum_of_states(
    family: &BasisFamily,
    ops: &[(&str, &OperatorTerms)],
    cfg: &DetSamplerConfig,
) -> Result<GramPack> {
    check_ops(family, ops)?;
    let m = family.m();
    let (accs, diags) = run_chains(
        &SumTarget(family),
        cfg,
        || {
            vec![MatrixAccumulator::new(m, m, cfg.n_samples_per_chain); ops.len() + 1]
        },
        |acc: &mut Vec<MatrixAccumulator>, s: &MultiConfig| match sos_sample(family, ops, s.copy(0)) {
            Some(xs) => {
                for (a, x) in acc.iter_mut().zip(&xs) {
                    a.push(x);
                }
                true
            }
            None => false,
        },
    )?;
    let stats = (0..=ops.len())
        .map(|k| MatrixStats::reduce(accs.iter().map(|a| &a[k])))
        .collect::<Result<Vec<_>>>()?;
    let mut pack = sos_pack(stats, ops, true);
    pack.diagnostics = Some(diags);
    Ok(pack)
}

/// The sum-of-states expectation evaluated by exhaustive enumeration, i.e. exactly
/// G/‖p‖ and G^(O)/‖p‖ with ‖p‖ = Σ_k ‖φ_k‖².
pub fn sum_of_states_exhaustive(family: &BasisFamily, ops: &[(&str, &OperatorTerms)]) -> Result<GramPack> {
    check_ops(family, ops)?;
    let m = family.m();
    let norm: f64 = family.members().iter().map(AmplitudeState::norm_sqr).sum();
    let mut sums = vec![DMatrix::from_element(m, m, ZERO); ops.len() + 1];
    for s in SpinConfig::all(family.n()) {
        let w: f64 = family.amplitudes_at(s).iter().map(|z| z.norm_sqr()).sum();
        if let Some(xs) = sos_sample(family, ops, s) {
            let p = C64::new(w / norm, 0.0);
            for (acc, x) in sums.iter_mut().zip(xs) {
                *acc += x * p;
            }
        }
    }
    let stats = sums
        .into_iter()
        .map(|mean| MatrixStats {
            std_error: DMatrix::zeros(m, m),
            sample_std: DMatrix::zeros(m, m),
            mean,
            count: 0,
        })
        .collect();
    Ok(sos_pack(stats, ops, false))
}

/// Rayleigh matrix of one operator with uncertainty and spectrum.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RayleighEstimate {
    pub operator: String,
    #[serde(with = "serde_cmat")]
    pub matrix: DMatrix<C64>,
    /// M at full working precision when it was assembled in extended precision.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix_xp: Option<XComplexMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_rmat")]
    pub std_error: Option<DMatrix<f64>>,
    /// Per-sample standard deviation of the local Rayleigh matrix.
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_rmat")]
    pub sample_std: Option<DMatrix<f64>>,
    /// Eigenvalues sorted by real part.
    #[serde(with = "serde_cvec")]
    pub eigenvalues: Vec<C64>,
    pub assembly: AssemblyPolicy,
    pub imag_policy: ImagPolicy,
    pub samples: usize,
    pub skipped_singular: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<SamplerDiagnostics>,
}

impl RayleighEstimate {
    fn from_matrix(operator: &str, matrix: DMatrix<C64>, assembly: AssemblyPolicy) -> Result<Self> {
        let eig = GeneralEigen::new(&matrix)?.sorted_by_real();
        Ok(Self {
            operator: operator.to_string(),
            matrix,
            matrix_xp: None,
            std_error: None,
            sample_std: None,
            eigenvalues: eig.values,
            assembly,
            imag_policy: ImagPolicy::Keep,
            samples: 0,
            skipped_singular: 0,
            diagnostics: None,
        })
    }

    pub fn m(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn max_eigen_imag(&self) -> f64 {
        self.eigenvalues.iter().map(|z| z.im.abs()).fold(0.0, f64::max)
    }
}

/// Monte Carlo determinant-state estimate of M = G⁻¹G^(O) as the mean of
/// Φ(s)⁻¹Φ^(O)(s) over s ~ |det Φ(s)|².
pub fn estimate_det_state(
    family: &BasisFamily,
    op: &OperatorTerms,
    label: &str,
    cfg: &DetSamplerConfig,
) -> Result<RayleighEstimate> {
    check_ops(family, &[(label, op)])?;
    let m = family.m();
    let (accs, diags) = run_chains(
        &DetTarget(family),
        cfg,
        || MatrixAccumulator::new(m, m, cfg.n_samples_per_chain),
        |acc: &mut MatrixAccumulator, s: &MultiConfig| match local_rayleigh_unchecked(family, op, s) {
            Some(x) => {
                acc.push(&x);
                true
            }
            None => false,
        },
    )?;
    let stats = MatrixStats::reduce(accs.iter())?;
    let mut est = RayleighEstimate::from_matrix(label, stats.mean, AssemblyPolicy::DirectMean)?;
    est.std_error = Some(stats.std_error);
    est.sample_std = Some(stats.sample_std);
    est.samples = stats.count;
    est.skipped_singular = diags.skipped_singular();
    est.diagnostics = Some(diags);
    Ok(est)
}

/// The determinant-state expectation by exhaustive enumeration of all
/// (2^n)^m multi-configurations.
pub fn det_state_exhaustive(family: &BasisFamily, op: &OperatorTerms, label: &str) -> Result<RayleighEstimate> {
    check_ops(family, &[(label, op)])?;
    let m = family.m();
    let total = (family.dim() as f64).powi(m as i32);
    if total > 1e7 {
        return Err(Error::SizeCap {
            n: family.n(),
            cap: 0,
        });
    }
    let mut sum = DMatrix::from_element(m, m, ZERO);
    let mut z = 0.0;
    let mut skipped = 0;
    for s in MultiConfig::all(family.n(), m) {
        let w = det_phi(phi_matrix(family, &s)).norm_sqr();
        if w == 0.0 {
            continue;
        }
        match local_rayleigh_unchecked(family, op, &s) {
            Some(x) => {
                sum += x * C64::new(w, 0.0);
                z += w;
            }
            None => skipped += 1,
        }
    }
    if z == 0.0 {
        return Err(Error::Singular("determinant state vanishes identically".into()));
    }
    let mut est = RayleighEstimate::from_matrix(label, sum / C64::new(z, 0.0), AssemblyPolicy::DirectMean)?;
    est.skipped_singular = skipped;
    Ok(est)
}

/// M = G⁻¹G^(O) for the labelled operator of a pack.
pub fn assemble_rayleigh(pack: &GramPack, label: &str, policy: AssemblyPolicy) -> Result<RayleighEstimate> {
    let go = pack.op(label)?;
    let matrix = solve_gram(&pack.g, go, policy)?;
    let mut est = RayleighEstimate::from_matrix(label, matrix, policy)?;
    est.samples = pack.samples;
    Ok(est)
}

/// M = G⁻¹G^(O) solved entirely in extended precision, then rounded to double.
pub fn assemble_rayleigh_xp(pack: &XGramPack, label: &str) -> Result<RayleighEstimate> {
    let xm = pack.rayleigh(label)?;
    let mut est = RayleighEstimate::from_matrix(label, xm.to_c64(), AssemblyPolicy::Xp { digits: pack.digits() })?;
    est.matrix_xp = Some(xm);
    Ok(est)
}

/// G⁻¹·B under the given policy.
pub fn solve_gram(g: &DMatrix<C64>, b: &DMatrix<C64>, policy: AssemblyPolicy) -> Result<DMatrix<C64>> {
    if g.nrows() != g.ncols() || b.nrows() != g.nrows() {
        return Err(Error::Dimension("Gram system shapes disagree".into()));
    }
    match policy {
        AssemblyPolicy::Xp { digits } => {
            let a = XComplexMatrix::from_c64(g, digits)?;
            let rhs = XComplexMatrix::from_c64(b, digits)?;
            Ok(xp_solve(&a, &rhs)?.to_c64())
        }
        AssemblyPolicy::Pinv { rcond } => Ok(pinv(g, rcond)? * b),
        AssemblyPolicy::DirectMean => Err(Error::Invalid(
            "direct-mean assembly applies only to the determinant-state estimator".into(),
        )),
    }
}

/// Imaginary parts above this fraction of the spectral scale trigger a warning.
pub const IMAG_WARN_TOL: f64 = 1e-8;

/// Applies `discard-eig-imag`: returns the estimate with real eigenvalues and the
/// largest imaginary part that was dropped.
pub fn realify_eigenvalues(est: &RayleighEstimate) -> (RayleighEstimate, f64) {
    let max_imag = est.max_eigen_imag();
    let scale = est.eigenvalues.iter().map(|z| z.norm()).fold(1.0, f64::max);
    if max_imag > IMAG_WARN_TOL * scale {
        warn!(
            "discarding eigenvalue imaginary parts up to {max_imag:.3e} for '{}'",
            est.operator
        );
    }
    let mut out = est.clone();
    for z in &mut out.eigenvalues {
        z.im = 0.0;
    }
    out.eigenvalues.sort_by(|a, b| a.re.total_cmp(&b.re));
    out.imag_policy = ImagPolicy::DiscardEigImag;
    (out, max_imag)
}

/// Standard VMC estimate of ⟨ψ|O|ψ⟩/⟨ψ|ψ⟩ as the mean local value over |ψ(s)|².
pub fn vmc_estimate(state: &AmplitudeState, op: &OperatorTerms, cfg: &DetSamplerConfig) -> Result<(f64, f64)> {
    let fam = BasisFamily::new(vec![state.clone()])?;
    check_ops(&fam, &[("O", op)])?;
    let (accs, _) = run_chains(
        &DetTarget(&fam),
        cfg,
        || MatrixAccumulator::new(1, 1, cfg.n_samples_per_chain),
        |acc: &mut MatrixAccumulator, s: &MultiConfig| {
            let c = s.copy(0);
            let a = state.amp(c);
            if a == ZERO {
                return false;
            }
            acc.push(&DMatrix::from_element(1, 1, state.local_row_unchecked(op, c) / a));
            true
        },
    )?;
    let st = MatrixStats::reduce(accs.iter())?;
    Ok((st.mean[(0, 0)].re, st.std_error[(0, 0)]))
}
