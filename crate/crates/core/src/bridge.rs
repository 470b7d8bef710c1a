//! Bridge: linear TDVP on a fixed family, α(t) = exp(−iMt)·α(0) with
//! M = G⁻¹G^(H), plus observables, infidelities and the best-in-span baseline.

use std::collections::HashMap;

use log::debug;
use nalgebra::{DMatrix, DVector};
use rug::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{serde_cvec, ZERO};
use crate::oracle::fidelity;
use crate::rayleigh::{solve_gram, AssemblyPolicy, XGramPack};
use crate::state::{inner, AmplitudeState, BasisFamily};
use crate::xprec::{
    bits_for_digits, xp_dot_conj, xp_expm, xp_matvec, xp_solve, xp_vec, XComplex, XComplexMatrix, DEFAULT_DIGITS,
    MIN_DIGITS,
};
use crate::C64;

/// Default number of output points per basis interval.
pub const DEFAULT_GRID_REFINE: usize = 10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BridgeMode {
    /// One step matrix per distinct grid spacing, α propagated by products.
    #[default]
    Stepped,
    /// exp(−iMt) recomputed for every output time.
    Direct,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BridgeOptions {
    pub digits: u32,
    pub mode: BridgeMode,
}

impl Default for BridgeOptions {
    fn default() -> Self {
        Self {
            digits: DEFAULT_DIGITS,
            mode: BridgeMode::Stepped,
        }
    }
}

/// The gauge λ in α̇ = −iMα + λα is fixed at 0; any other choice changes α(t)
/// by a scalar factor and leaves the state unchanged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GaugeNote {
    pub lambda_choice: f64,
}

/// α(t) on an output grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BridgeTrajectory {
    pub times: Vec<f64>,
    pub alphas: Vec<Alpha>,
    pub precision_digits: u32,
    pub mode: BridgeMode,
    /// Label of the Rayleigh matrix that drove the solve.
    pub rayleigh_source: String,
    /// Largest ‖α(t)‖/‖α(0)‖ along the trajectory.
    pub max_growth: f64,
    pub gauge: GaugeNote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Alpha(#[serde(with = "serde_cvec")] pub Vec<C64>);

impl BridgeTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn m(&self) -> usize {
        self.alphas.first().map_or(0, |a| a.0.len())
    }

    pub fn alpha(&self, k: usize) -> &[C64] {
        &self.alphas[k].0
    }

    pub fn alpha_norms(&self) -> Vec<f64> {
        self.alphas
            .iter()
            .map(|a| a.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.first() != Some(&0.0) {
        return Err(Error::Invalid("time grid must start at 0".into()));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
        return Err(Error::Invalid("time grid must be strictly ascending".into()));
    }
    Ok(())
}

fn default_alpha0(m: usize, alpha0: Option<&[C64]>) -> Result<Vec<C64>> {
    match alpha0 {
        Some(a) if a.len() != m => Err(Error::Dimension(format!(
            "α(0) has {} entries for {m} basis states",
            a.len()
        ))),
        Some(a) if a.iter().all(|z| *z == ZERO) => Err(Error::Invalid("α(0) must be nonzero".into())),
        Some(a) => Ok(a.to_vec()),
        None => {
            let mut e0 = vec![ZERO; m];
            if m > 0 {
                e0[0] = C64::new(1.0, 0.0);
            }
            Ok(e0)
        }
    }
}

fn xp_norm(v: &XComplexMatrix) -> Float {
    v.norm_frobenius()
}

/// Growth of ‖α‖ beyond 10^(digits/4) means the working precision no longer
/// covers the cancellations needed to reconstruct the state.
fn growth_guard(growth: f64, digits: u32) -> Result<()> {
    let limit = 10f64.powf(digits as f64 / 4.0);
    if !(growth < limit) {
        return Err(Error::Numerical(format!(
            "‖α(t)‖ grew by {growth:.3e}, beyond what {digits} digits resolve; raise --digits or shorten the horizon"
        )));
    }
    Ok(())
}

/// Spacing `dt` when every `times[k]` equals k·dt up to a few ulps of the
/// horizon, so a single step matrix serves the whole grid.
fn uniform_spacing(times: &[f64]) -> Option<f64> {
    let last = *times.last()?;
    if times.len() < 2 {
        return None;
    }
    let dt = last / (times.len() - 1) as f64;
    let tol = 64.0 * f64::EPSILON * last;
    times
        .iter()
        .enumerate()
        .all(|(k, &t)| (t - k as f64 * dt).abs() <= tol)
        .then_some(dt)
}

/// −i·τ·M in extended precision.
fn generator_step(m: &XComplexMatrix, tau: f64) -> XComplexMatrix {
    let prec = m.prec();
    let z = XComplex {
        re: Float::with_val(prec, 0),
        im: Float::with_val(prec, -tau),
    };
    m.scale(&z)
}

/// Solves α̇ = −iMα on `times` with α(0) = `alpha0` (default e₀).
pub fn bridge_solve(
    m: &DMatrix<C64>,
    alpha0: Option<&[C64]>,
    times: &[f64],
    opts: &BridgeOptions,
) -> Result<BridgeTrajectory> {
    let mx = XComplexMatrix::from_c64(m, opts.digits)?;
    bridge_solve_xp(&mx, alpha0, times, opts, "M")
}

/// As [`bridge_solve`] with M already held in extended precision.
pub fn bridge_solve_xp(
    m: &XComplexMatrix,
    alpha0: Option<&[C64]>,
    times: &[f64],
    opts: &BridgeOptions,
    source: &str,
) -> Result<BridgeTrajectory> {
    if opts.digits < MIN_DIGITS {
        return Err(Error::Invalid(format!("at least {MIN_DIGITS} digits are required")));
    }
    if m.rows() != m.cols() {
        return Err(Error::Dimension("Rayleigh matrix must be square".into()));
    }
    check_times(times)?;
    let a0 = default_alpha0(m.rows(), alpha0)?;
    let m = if m.digits() == opts.digits {
        m.clone()
    } else {
        m.with_digits(opts.digits)?
    };
    let a0x = XComplexMatrix::from_vector(&DVector::from_vec(a0.clone()), opts.digits)?;
    let n0 = xp_norm(&a0x).to_f64();
    let mut alphas = vec![Alpha(a0)];
    let mut max_growth = 1.0f64;
    match opts.mode {
        BridgeMode::Stepped => {
            let mut cache: HashMap<u64, XComplexMatrix> = HashMap::new();
            let mut cur = a0x;
            let uniform = uniform_spacing(times);
            for w in times.windows(2) {
                let tau = uniform.unwrap_or(w[1] - w[0]);
                if !cache.contains_key(&tau.to_bits()) {
                    debug!("step matrix for Δ = {tau}");
                    cache.insert(tau.to_bits(), xp_expm(&generator_step(&m, tau))?);
                }
                cur = xp_matvec(&cache[&tau.to_bits()], &cur)?;
                let g = xp_norm(&cur).to_f64() / n0;
                max_growth = max_growth.max(g);
                growth_guard(g, opts.digits)?;
                alphas.push(Alpha(cur.column_to_c64(0).iter().copied().collect()));
            }
        }
        BridgeMode::Direct => {
            for &t in &times[1..] {
                let e = xp_expm(&generator_step(&m, t))?;
                let a = xp_matvec(&e, &a0x)?;
                let g = xp_norm(&a).to_f64() / n0;
                max_growth = max_growth.max(g);
                growth_guard(g, opts.digits)?;
                alphas.push(Alpha(a.column_to_c64(0).iter().copied().collect()));
            }
        }
    }
    Ok(BridgeTrajectory {
        times: times.to_vec(),
        alphas,
        precision_digits: opts.digits,
        mode: opts.mode,
        rayleigh_source: source.to_string(),
        max_growth,
        gauge: GaugeNote::default(),
    })
}

/// Time-dependent H(t) = Σ_p β_p(t)H_p with β held constant on each output
/// interval at its left-endpoint value. Step matrices are cached per (β, Δ), so
/// constant β reproduces [`bridge_solve`] on Σ_p β_p M_p exactly.
pub fn bridge_solve_time_dependent(
    parts: &[DMatrix<C64>],
    beta: impl Fn(f64) -> Vec<f64>,
    alpha0: Option<&[C64]>,
    times: &[f64],
    digits: u32,
) -> Result<BridgeTrajectory> {
    let m = parts
        .first()
        .ok_or_else(|| Error::Invalid("at least one Hamiltonian part is required".into()))?
        .nrows();
    if parts.iter().any(|p| p.shape() != (m, m)) {
        return Err(Error::Dimension("parts must all be m×m".into()));
    }
    if digits < MIN_DIGITS {
        return Err(Error::Invalid(format!("at least {MIN_DIGITS} digits are required")));
    }
    check_times(times)?;
    let a0 = default_alpha0(m, alpha0)?;
    let mut cur = XComplexMatrix::from_vector(&DVector::from_vec(a0.clone()), digits)?;
    let n0 = xp_norm(&cur).to_f64();
    let mut alphas = vec![Alpha(a0)];
    let mut max_growth = 1.0f64;
    let mut cache: HashMap<(Vec<u64>, u64), XComplexMatrix> = HashMap::new();
    let uniform = uniform_spacing(times);
    for w in times.windows(2) {
        let b = beta(w[0]);
        if b.len() != parts.len() {
            return Err(Error::Dimension(format!(
                "β(t) has {} entries for {} parts",
                b.len(),
                parts.len()
            )));
        }
        let tau = uniform.unwrap_or(w[1] - w[0]);
        let key = (b.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), tau.to_bits());
        if !cache.contains_key(&key) {
            let mt = combine_parts(parts, &b);
            let mx = XComplexMatrix::from_c64(&mt, digits)?;
            cache.insert(key.clone(), xp_expm(&generator_step(&mx, tau))?);
        }
        cur = xp_matvec(&cache[&key], &cur)?;
        let g = xp_norm(&cur).to_f64() / n0;
        max_growth = max_growth.max(g);
        growth_guard(g, digits)?;
        alphas.push(Alpha(cur.column_to_c64(0).iter().copied().collect()));
    }
    Ok(BridgeTrajectory {
        times: times.to_vec(),
        alphas,
        precision_digits: digits,
        mode: BridgeMode::Stepped,
        rayleigh_source: "time-dependent".into(),
        max_growth,
        gauge: GaugeNote::default(),
    })
}

/// Σ_p β_p M_p, accumulated in part order.
pub fn combine_parts(parts: &[DMatrix<C64>], beta: &[f64]) -> DMatrix<C64> {
    let m = parts[0].nrows();
    let mut out = DMatrix::from_element(m, m, ZERO);
    for (p, b) in parts.iter().zip(beta) {
        out += p * C64::new(*b, 0.0);
    }
    out
}

/// Output grid: `refine` points per basis interval over the basis span, then
/// the same spacing continued for `extrapolate` extra time.
pub fn refine_grid(basis_times: &[f64], refine: usize, extrapolate: f64) -> Result<Vec<f64>> {
    check_times(basis_times)?;
    if refine == 0 {
        return Err(Error::Invalid("grid refinement must be at least 1".into()));
    }
    let mut out = vec![0.0];
    for w in basis_times.windows(2) {
        for j in 1..=refine {
            out.push(if j == refine {
                w[1]
            } else {
                w[0] + (w[1] - w[0]) * j as f64 / refine as f64
            });
        }
    }
    if extrapolate > 0.0 {
        let last = *basis_times.last().unwrap();
        let h = if basis_times.len() > 1 {
            (last - basis_times[basis_times.len() - 2]) / refine as f64
        } else {
            extrapolate / refine as f64
        };
        let extra = (extrapolate / h).round() as usize;
        for j in 1..=extra {
            out.push(last + h * j as f64);
        }
    }
    Ok(out)
}

fn quad_form_xp(a: &DMatrix<C64>, alpha: &[C64], digits: u32) -> Result<C64> {
    let ax = XComplexMatrix::from_c64(a, digits)?;
    let v = XComplexMatrix::from_vector(&DVector::from_column_slice(alpha), digits)?;
    let av = xp_matvec(&ax, &v)?;
    let vh = v.adjoint();
    Ok(vh.mul(&av)?.to_c64()[(0, 0)])
}

/// Re(α†G^(A)α/α†Gα) per time, with the largest imaginary residue.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObservableSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub max_imag: f64,
}

/// Observable along the trajectory from Gram-pack entries; quadratic forms are
/// evaluated in the trajectory's working precision.
pub fn bridge_observable(g: &DMatrix<C64>, ga: &DMatrix<C64>, traj: &BridgeTrajectory) -> Result<ObservableSeries> {
    let m = g.nrows();
    if g.shape() != (m, m) || ga.shape() != (m, m) || traj.m() != m {
        return Err(Error::Dimension("pack entries and trajectory disagree on m".into()));
    }
    let digits = traj.precision_digits.max(MIN_DIGITS);
    let mut values = Vec::with_capacity(traj.len());
    let mut max_imag = 0.0f64;
    for a in &traj.alphas {
        let den = quad_form_xp(g, &a.0, digits)?;
        if den.re.abs() < 1e-300 {
            return Err(Error::Numerical("α†Gα vanished along the trajectory".into()));
        }
        let r = quad_form_xp(ga, &a.0, digits)? / den;
        values.push(r.re);
        max_imag = max_imag.max(r.im.abs());
    }
    Ok(ObservableSeries {
        times: traj.times.clone(),
        values,
        max_imag,
    })
}

/// 1 − F(ψ_exact(t), Σ_k α_k(t)φ_k), with the linear state reconstructed densely.
pub fn bridge_infidelity(traj: &BridgeTrajectory, family: &BasisFamily, oracle: &[AmplitudeState]) -> Result<Vec<f64>> {
    if oracle.len() != traj.len() {
        return Err(Error::Dimension(format!(
            "{} oracle states for {} trajectory times",
            oracle.len(),
            traj.len()
        )));
    }
    if traj.m() != family.m() {
        return Err(Error::Dimension("trajectory and family disagree on m".into()));
    }
    traj.alphas
        .iter()
        .zip(oracle)
        .map(|(a, psi)| {
            let v = family.combine(&a.0)?;
            let lin = AmplitudeState::from_vector(family.n(), &v, "bridge")?;
            Ok((1.0 - fidelity(psi, &lin)?).max(0.0))
        })
        .collect()
}

/// Infidelity of the orthogonal projection of `psi` onto span(family),
/// 1 − ‖Pψ‖²/‖ψ‖², from a rank-revealing SVD of the amplitude matrix.
pub fn optimal_in_subspace(family: &BasisFamily, psi: &AmplitudeState) -> Result<f64> {
    if psi.n() != family.n() {
        return Err(Error::SiteMismatch {
            expected: family.n(),
            got: psi.n(),
        });
    }
    let svd = family.to_matrix().svd(true, false);
    let u = svd.u.as_ref().unwrap();
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let v = psi.to_vector();
    let mut proj = 0.0;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > 1e-13 * smax {
            proj += (u.column(k).adjoint() * &v)[(0, 0)].norm_sqr();
        }
    }
    Ok((1.0 - proj / psi.norm_sqr()).max(0.0))
}

/// 1 − v†G⁻¹v/‖ψ‖² with v_k = ⟨φ_k|ψ⟩, solved under `policy`.
pub fn optimal_in_subspace_gram(
    g: &DMatrix<C64>,
    v: &[C64],
    psi_norm_sqr: f64,
    policy: AssemblyPolicy,
) -> Result<f64> {
    let vv = DMatrix::from_column_slice(v.len(), 1, v);
    let x = solve_gram(g, &vv, policy)?;
    let q = (vv.adjoint() * x)[(0, 0)].re;
    Ok((1.0 - q / psi_norm_sqr).max(0.0))
}

/// [`optimal_in_subspace_gram`] with G, the overlaps and ‖ψ‖² all carried in
/// the pack's extended precision.
pub fn optimal_in_subspace_xp(pack: &XGramPack, family: &BasisFamily, psi: &AmplitudeState) -> Result<f64> {
    if psi.n() != family.n() {
        return Err(Error::SiteMismatch {
            expected: family.n(),
            got: psi.n(),
        });
    }
    if pack.m() != family.m() {
        return Err(Error::Dimension("pack and family disagree on m".into()));
    }
    let digits = pack.digits();
    let prec = bits_for_digits(digits);
    let px = xp_vec(psi.amplitudes(), prec);
    let v: Vec<XComplex> = family
        .members()
        .iter()
        .map(|mem| xp_dot_conj(&xp_vec(mem.amplitudes(), prec), &px, prec))
        .collect();
    let vx = XComplexMatrix::from_entries(v, digits)?;
    let x = xp_solve(&pack.g, &vx)?;
    let q = vx.adjoint().mul(&x)?[(0, 0)].re.clone();
    let nn = xp_dot_conj(&px, &px, prec).re;
    let r = Float::with_val(prec, 1) - q / nn;
    Ok(r.to_f64().max(0.0))
}

/// [`bridge_observable`] with the pack entries kept in extended precision.
pub fn bridge_observable_xp(pack: &XGramPack, label: &str, traj: &BridgeTrajectory) -> Result<ObservableSeries> {
    let ga = pack.op(label)?;
    if traj.m() != pack.m() {
        return Err(Error::Dimension("pack and trajectory disagree on m".into()));
    }
    let digits = pack.digits();
    let mut values = Vec::with_capacity(traj.len());
    let mut max_imag = 0.0f64;
    for a in &traj.alphas {
        let ax = XComplexMatrix::from_vector(&DVector::from_column_slice(&a.0), digits)?;
        let axh = ax.adjoint();
        let den = axh.mul(&pack.g.mul(&ax)?)?[(0, 0)].clone();
        if den.re.is_zero() {
            return Err(Error::Numerical("α†Gα vanished along the trajectory".into()));
        }
        let num = axh.mul(&ga.mul(&ax)?)?[(0, 0)].clone();
        let r = num.div(&den).to_c64();
        values.push(r.re);
        max_imag = max_imag.max(r.im.abs());
    }
    Ok(ObservableSeries {
        times: traj.times.clone(),
        values,
        max_imag,
    })
}

/// ⟨φ_k|ψ⟩ for every member.
pub fn overlaps(family: &BasisFamily, psi: &AmplitudeState) -> Result<Vec<C64>> {
    family.members().iter().map(|m| m.inner(psi)).collect()
}

/// ‖Sα̇ + iF‖/‖F‖ with α̇ = −iG⁻¹G^(H)α and S, F the linear-state geometric
/// tensor and force (0 when both vanish).
pub fn tdvp_residual(g: &DMatrix<C64>, gh: &DMatrix<C64>, alpha: &[C64]) -> Result<f64> {
    let m = g.nrows();
    if gh.shape() != (m, m) || alpha.len() != m {
        return Err(Error::Dimension("G, G^(H) and α disagree on m".into()));
    }
    let a = DVector::from_column_slice(alpha);
    let ga = g * &a;
    let c = inner(a.as_slice(), ga.as_slice()).re;
    if c <= 0.0 {
        return Err(Error::Singular("α†Gα is not positive".into()));
    }
    let cc = C64::new(c, 0.0);
    let s = (g - &ga * ga.adjoint() / cc) / cc;
    let gha = gh * &a;
    let e = inner(a.as_slice(), gha.as_slice()) / cc;
    let f = (&gha - &ga * e) / cc;
    let mdot = crate::linalg::lu_solve(g, gh)?;
    let adot = (mdot * &a) * C64::new(0.0, -1.0);
    let r = s * adot + f.clone() * C64::new(0.0, 1.0);
    let fnorm = f.norm();
    if fnorm == 0.0 {
        return Ok(if r.norm() == 0.0 { 0.0 } else { f64::INFINITY });
    }
    let scale = g.norm() * a.norm() / c * (gh.norm() * a.norm() / c).max(1.0);
    // both sides vanish identically (m = 1); treat rounding residue as 0
    if fnorm <= 1e-14 * scale && r.norm() <= 1e-14 * scale {
        return Ok(0.0);
    }
    Ok(r.norm() / fnorm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ExactEvolver;
    use crate::rayleigh::{assemble_rayleigh, exact_gram_pack};
    use crate::spin_model::{build_tfim, magnetization_x, Boundary, Geometry, OperatorTerms};
    use crate::state::uniform_state;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn opts(digits: u32, mode: BridgeMode) -> BridgeOptions {
        BridgeOptions { digits, mode }
    }

    #[test]
    fn diagonal_rayleigh_closed_form() {
        let e = [-1.0, 0.3, 2.5];
        let m = DMatrix::from_diagonal(&DVector::from_iterator(3, e.iter().map(|&x| C64::new(x, 0.0))));
        let a0 = [C64::new(0.6, 0.0), C64::new(0.0, 0.8), C64::new(0.1, 0.1)];
        let times: Vec<f64> = (0..50).map(|k| 0.1 * k as f64).collect();
        let tr = bridge_solve(&m, Some(&a0), &times, &opts(60, BridgeMode::Stepped)).unwrap();
        for (t, a) in times.iter().zip(&tr.alphas) {
            for k in 0..3 {
                let want = a0[k] * C64::from_polar(1.0, -e[k] * t);
                assert!((a.0[k] - want).norm() < 1e-12);
                assert!((a.0[k].norm() - a0[k].norm()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stepped_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = DMatrix::from_fn(4, 4, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let d = DMatrix::from_diagonal(&DVector::from_iterator(4, (0..4).map(|k| C64::new(k as f64 - 1.5, 0.0))));
        let m = b.clone().try_inverse().unwrap() * d * b;
        let times: Vec<f64> = (0..=100).map(|k| 0.05 * k as f64).collect();
        let a = bridge_solve(&m, None, &times, &opts(80, BridgeMode::Stepped)).unwrap();
        let c = bridge_solve(&m, None, &times, &opts(80, BridgeMode::Direct)).unwrap();
        for (x, y) in a.alphas.iter().zip(&c.alphas) {
            let d: f64 = x.0.iter().zip(&y.0).map(|(p, q)| (p - q).norm()).sum();
            assert!(d < 1e-10);
        }
        assert_eq!(a.alpha(0), &[C64::new(1.0, 0.0), ZERO, ZERO, ZERO]);
    }

    #[test]
    fn bad_grids_and_alpha() {
        let m = DMatrix::identity(2, 2);
        let o = BridgeOptions::default();
        assert!(bridge_solve(&m, None, &[0.1, 0.2], &o).is_err());
        assert!(bridge_solve(&m, None, &[0.0, 0.2, 0.2], &o).is_err());
        assert!(bridge_solve(&m, Some(&[ZERO, ZERO]), &[0.0, 0.1], &o).is_err());
        assert!(bridge_solve(&m, Some(&[ZERO]), &[0.0, 0.1], &o).is_err());
        assert!(bridge_solve(&m, None, &[0.0, 0.1], &opts(20, BridgeMode::Stepped)).is_err());
    }

    #[test]
    fn growth_guard_trips() {
        let m = DMatrix::from_element(1, 1, C64::new(0.0, 30.0));
        let times = [0.0, 1.0, 2.0, 3.0, 4.0];
        let err = bridge_solve(&m, None, &times, &opts(50, BridgeMode::Stepped)).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }

    /// Krylov family {ψ₀, Hψ₀, …} of a 3-site chain spans an invariant subspace.
    #[test]
    fn invariant_subspace_is_exact() {
        let h = build_tfim(Geometry::chain(3, Boundary::Open), 1.0, 0.7).unwrap();
        let psi0 = uniform_state(3).unwrap();
        let mut members = vec![psi0.clone()];
        for _ in 0..7 {
            let v = members.last().unwrap().apply(&h).unwrap();
            members.push(AmplitudeState::new(3, v, "k").unwrap().normalized());
        }
        let fam = BasisFamily::new(members).unwrap();
        let pack = exact_gram_pack(&fam, &[("H", &h)]).unwrap();
        let rm = assemble_rayleigh(&pack, "H", AssemblyPolicy::default()).unwrap();
        let times: Vec<f64> = (0..=40).map(|k| 0.1 * k as f64).collect();
        let tr = bridge_solve(&rm.matrix, None, &times, &BridgeOptions::default()).unwrap();
        let ev = ExactEvolver::new(&h).unwrap();
        let oracle: Vec<_> = times.iter().map(|&t| ev.evolve(&psi0, t).unwrap()).collect();
        let inf = bridge_infidelity(&tr, &fam, &oracle).unwrap();
        assert!(inf.iter().all(|&f| f < 1e-9), "{inf:?}");
    }

    #[test]
    fn observable_identity_and_initial_value() {
        let h = build_tfim(Geometry::chain(3, Boundary::Open), 1.0, 0.7).unwrap();
        let mx = magnetization_x(3).unwrap();
        let id = OperatorTerms::identity(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cols = DMatrix::from_fn(8, 3, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let fam = BasisFamily::from_columns(3, &cols).unwrap();
        let pack = exact_gram_pack(&fam, &[("H", &h), ("Mx", &mx), ("I", &id)]).unwrap();
        let rm = assemble_rayleigh(&pack, "H", AssemblyPolicy::default()).unwrap();
        let times = [0.0, 0.3, 0.6];
        let tr = bridge_solve(&rm.matrix, None, &times, &BridgeOptions::default()).unwrap();
        let one = bridge_observable(&pack.g, pack.op("I").unwrap(), &tr).unwrap();
        assert!(one.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let obs = bridge_observable(&pack.g, pack.op("Mx").unwrap(), &tr).unwrap();
        let phi0 = fam.member(0);
        assert!((obs.values[0] - phi0.expectation(&mx).unwrap()).abs() < 1e-12);
        assert!(obs.max_imag < 1e-8);
    }

    #[test]
    fn time_dependent_constant_beta_reduces_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut part = || {
            let a = DMatrix::from_fn(3, 3, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
            &a + a.adjoint()
        };
        let parts = vec![part(), part()];
        let beta = [0.7, -1.3];
        let times: Vec<f64> = (0..=20).map(|k| 0.05 * k as f64).collect();
        let td = bridge_solve_time_dependent(&parts, |_| beta.to_vec(), None, &times, 60).unwrap();
        let m = combine_parts(&parts, &beta);
        let cst = bridge_solve(&m, None, &times, &opts(60, BridgeMode::Stepped)).unwrap();
        assert_eq!(td.alphas, cst.alphas);
    }

    #[test]
    fn tdvp_residual_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let h = build_tfim(Geometry::chain(6, Boundary::Open), 1.0, 0.8).unwrap();
        let cols = DMatrix::from_fn(64, 3, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let fam = BasisFamily::from_columns(6, &cols).unwrap();
        let pack = exact_gram_pack(&fam, &[("H", &h)]).unwrap();
        let alpha: Vec<C64> = (0..3).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let r = tdvp_residual(&pack.g, pack.op("H").unwrap(), &alpha).unwrap();
        assert!(r < 1e-10, "{r}");
        let scaled: Vec<C64> = alpha.iter().map(|a| a * C64::new(0.0, 7.0)).collect();
        let r2 = tdvp_residual(&pack.g, pack.op("H").unwrap(), &scaled).unwrap();
        assert!((r - r2).abs() < 1e-10);
        let one = BasisFamily::new(vec![fam.member(0).clone()]).unwrap();
        let p1 = exact_gram_pack(&one, &[("H", &h)]).unwrap();
        assert_eq!(tdvp_residual(&p1.g, p1.op("H").unwrap(), &[C64::new(0.3, 0.2)]).unwrap(), 0.0);
    }

    #[test]
    fn optimal_in_subspace_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cols = DMatrix::from_fn(64, 3, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let fam = BasisFamily::from_columns(6, &cols).unwrap();
        let inside = crate::subspace::reconstruct(&fam, &[C64::new(1.0, 0.5), C64::new(-0.3, 0.0), C64::new(0.0, 2.0)]).unwrap();
        assert!(optimal_in_subspace(&fam, &inside).unwrap() < 1e-10);
        // brute-force least squares: min_α ‖ψ − Φα‖ over the normal equations
        let psi = AmplitudeState::new(
            6,
            (0..64).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect(),
            "psi",
        )
        .unwrap();
        let phi = fam.to_matrix();
        let alpha = (phi.adjoint() * &phi).lu().solve(&(phi.adjoint() * psi.to_vector())).unwrap();
        let best = crate::subspace::reconstruct(&fam, alpha.as_slice()).unwrap();
        let want = 1.0 - fidelity(&psi, &best).unwrap();
        assert!((optimal_in_subspace(&fam, &psi).unwrap() - want).abs() < 1e-9);
        let v = overlaps(&fam, &psi).unwrap();
        let g = phi.adjoint() * &phi;
        let via_g = optimal_in_subspace_gram(&g, &v, psi.norm_sqr(), AssemblyPolicy::default()).unwrap();
        assert!((via_g - want).abs() < 1e-9);
        // orthogonal complement
        let mut e = vec![ZERO; 4];
        e[0] = C64::new(1.0, 0.0);
        let a = AmplitudeState::new(2, e.clone(), "a").unwrap();
        e[0] = ZERO;
        e[3] = C64::new(1.0, 0.0);
        let b = AmplitudeState::new(2, e, "b").unwrap();
        let fam2 = BasisFamily::new(vec![a]).unwrap();
        assert!((optimal_in_subspace(&fam2, &b).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn refine_grid_layout() {
        let g = refine_grid(&[0.0, 0.1, 0.2], 10, 0.05).unwrap();
        assert_eq!(g.len(), 21 + 5);
        assert_eq!(g[10], 0.1);
        assert_eq!(g[20], 0.2);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn trajectory_json_round_trip() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(2.0, 0.0)]));
        let tr = bridge_solve(&m, None, &[0.0, 0.5, 1.0], &opts(50, BridgeMode::Direct)).unwrap();
        let back = BridgeTrajectory::from_json(&tr.to_json().unwrap()).unwrap();
        assert_eq!(back.alphas, tr.alphas);
        assert_eq!(back.times, tr.times);
    }
}
