//! Acceptance suite. Prints one PASS/FAIL line per criterion, with indented
//! detail lines underneath. Pass criterion numbers as arguments to run a subset:
//!
//!     cargo test -p bridge-core --test acceptance -- 6 8
//!
//! The process exits nonzero when a criterion fails unless it is listed in
//! `KNOWN_FAILURES`; those still print FAIL.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use bridge_core::bridge::{
    bridge_infidelity, bridge_observable, bridge_observable_xp, bridge_solve, bridge_solve_xp, optimal_in_subspace_xp,
    refine_grid, tdvp_residual, BridgeOptions,
};
use bridge_core::det_state::{
    change_basis, det_amplitude, sample_chain, DetSamplerConfig, MultiConfig,
};
use bridge_core::dynamics::{
    dense_propagator, generate_basis, scheme_step_matrix, DenseGenerator, ExactEvolver, GenerationReport, Noise,
    SchemeSpec,
};
use bridge_core::linalg::condition_number;
use bridge_core::oracle::{diagonalize, eigenvalues, infidelity, lanczos_ground_state};
use bridge_core::rayleigh::{
    assemble_rayleigh, estimate_det_state, estimate_sum_of_states, exact_gram_pack, exact_gram_pack_xp,
    AssemblyPolicy, XGramPack,
};
use bridge_core::spin_model::{
    build_tfim, magnetization_x, tfim_parts, Boundary, Geometry, OperatorTerms, SpinConfig, Term, TermBody,
};
use bridge_core::state::{uniform_state, AmplitudeState, BasisFamily};
use bridge_core::subspace::{reconstruct, ritz_spectrum, subspace_distance_exact, GroundStateInterpolator};
use bridge_core::C64;

/// Criteria expected to fail, with the reason printed next to the FAIL line.
const KNOWN_FAILURES: &[(u32, &str)] = &[(
    6,
    "(b) is capped by the trotter2 span itself: the best state in the subspace is only ~30x closer than the basis",
)];

const XP: AssemblyPolicy = AssemblyPolicy::Xp { digits: 200 };

struct Outcome {
    pass: bool,
    summary: String,
    details: Vec<String>,
}

impl Outcome {
    fn new(pass: bool, summary: impl Into<String>) -> Self {
        Self {
            pass,
            summary: summary.into(),
            details: Vec::new(),
        }
    }

    fn detail(mut self, line: impl Into<String>) -> Self {
        self.details.push(line.into());
        self
    }
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn random_amplitudes(dim: usize, rng: &mut ChaCha8Rng) -> Vec<C64> {
    (0..dim).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
}

fn random_family(n: usize, m: usize, rng: &mut ChaCha8Rng) -> BasisFamily {
    let members = (0..m)
        .map(|k| AmplitudeState::new(n, random_amplitudes(1 << n, rng), format!("r{k}")).unwrap())
        .collect();
    BasisFamily::new(members).unwrap()
}

fn random_matrix(r: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<C64> {
    DMatrix::from_fn(r, cols, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

/// Random real operator with ZZ, X and Z terms and a constant shift.
fn random_operator(n: usize, rng: &mut ChaCha8Rng) -> OperatorTerms {
    let mut terms = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(0.6) {
                terms.push(Term::new(rng.gen_range(-1.5..1.5), TermBody::ZZ(i, j)));
            }
        }
        terms.push(Term::new(rng.gen_range(-1.5..1.5), TermBody::X(i)));
        terms.push(Term::new(rng.gen_range(-0.5..0.5), TermBody::Z(i)));
    }
    terms.push(Term::new(rng.gen_range(-1.0..1.0), TermBody::Identity));
    OperatorTerms::new(n, terms).unwrap()
}

fn random_multi(n: usize, m: usize, rng: &mut ChaCha8Rng) -> MultiConfig {
    let copies = (0..m)
        .map(|_| SpinConfig::new(n, rng.gen_range(0..(1u64 << n))).unwrap())
        .collect();
    MultiConfig::new(copies).unwrap()
}

// 1. Sampled determinant-state Rayleigh matrix against the exact one.
fn rayleigh_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let h = build_tfim(Geometry::chain(8, Boundary::Periodic), 1.0, 1.0).unwrap();
    let (mut within, mut total) = (0usize, 0usize);
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let fam = random_family(8, 3, &mut ChaCha8Rng::seed_from_u64(1000 + seed));
        let exact = assemble_rayleigh(&exact_gram_pack(&fam, &[("H", &h)]).unwrap(), "H", XP)
            .unwrap()
            .matrix;
        let est = estimate_det_state(&fam, &h, "H", &DetSamplerConfig::new(8, 12_500, seed)).unwrap();
        let se = est.std_error.as_ref().unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let z = (est.matrix[(i, j)] - exact[(i, j)]).norm() / se[(i, j)];
                worst = worst.max(z);
                total += 1;
                within += usize::from(z <= 5.0);
            }
        }
    }
    let frac = within as f64 / total as f64;
    let elapsed = start.elapsed();
    Outcome::new(
        frac >= 0.95 && elapsed < Duration::from_secs(120),
        format!("{within}/{total} entries within 5 SE ({:.1}%), {elapsed:.1?}", 100.0 * frac),
    )
    .detail(format!("largest deviation {worst:.2} SE"))
}

// 2. Eigenvector families give a constant local estimator.
fn zero_variance() -> Outcome {
    let h = build_tfim(Geometry::chain(8, Boundary::Periodic), 1.0, 1.0).unwrap();
    let spec = diagonalize(&h).unwrap();
    let fam = BasisFamily::new((0..3).map(|k| spec.eigenstate(k).unwrap()).collect()).unwrap();
    let est = estimate_det_state(&fam, &h, "H", &DetSamplerConfig::new(4, 5_000, 2)).unwrap();
    let sd = est.sample_std.as_ref().unwrap().max();
    let eig_err = (0..3)
        .map(|k| (est.eigenvalues[k].re - spec.values[k]).abs())
        .fold(0.0, f64::max);
    Outcome::new(
        sd < 1e-10,
        format!("max per-sample std {sd:.2e} over {} samples", est.samples),
    )
    .detail(format!("eigenvalues match the spectrum to {eig_err:.1e}"))
}

// 3. Ritz values interlace the spectrum and sum to the trace.
fn interlacing_and_trace() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_margin, mut worst_trace, mut worst_kyfan) = (f64::INFINITY, 0.0f64, f64::INFINITY);
    for _ in 0..200 {
        let n = rng.gen_range(2..=4);
        let m = rng.gen_range(1..=4);
        let op = random_operator(n, &mut rng);
        let fam = random_family(n, m, &mut rng);
        let pack = exact_gram_pack(&fam, &[("H", &op)]).unwrap();
        let ritz = ritz_spectrum(&pack, "H", XP).unwrap();
        let e = eigenvalues(&op).unwrap();
        for k in 0..m {
            worst_margin = worst_margin.min(ritz.values[k] - e[k]);
        }
        let trace = assemble_rayleigh(&pack, "H", XP).unwrap().matrix.trace();
        let sum: f64 = ritz.values.iter().sum();
        worst_trace = worst_trace.max((sum - trace.re).abs().max(trace.im.abs()));
        worst_kyfan = worst_kyfan.min(sum - e[..m].iter().sum::<f64>());
    }
    Outcome::new(
        worst_margin >= -1e-10 && worst_trace <= 1e-10 && worst_kyfan >= -1e-10,
        format!("min(μ_k − E_k) = {worst_margin:.2e}, max |Σμ − tr M| = {worst_trace:.1e} on 200 instances"),
    )
    .detail(format!("min(Σμ − Σ_lowest E) = {worst_kyfan:.2e}"))
}

/// ⟨U|V⟩ between determinant states by summing over every multi-configuration.
fn det_overlap(u: &BasisFamily, v: &BasisFamily) -> C64 {
    MultiConfig::all(u.n(), u.m())
        .map(|s| det_amplitude(u, &s).unwrap().conj() * det_amplitude(v, &s).unwrap())
        .sum()
}

// 4. Determinant-state identities.
fn determinant_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut cob, mut antisym_ok, mut dist, mut right) = (0.0f64, true, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let fam = random_family(4, 3, &mut rng);
        let b = random_matrix(3, 3, &mut rng);
        let rotated = change_basis(&fam, &b).unwrap();
        for _ in 0..20 {
            let s = random_multi(4, 3, &mut rng);
            let a = det_amplitude(&fam, &s).unwrap();
            let ar = det_amplitude(&rotated, &s).unwrap();
            if a.norm() > 0.0 {
                cob = cob.max((ar - b.determinant() * a).norm() / (b.determinant() * a).norm());
            }
            antisym_ok &= det_amplitude(&fam, &s.swapped(0, 2)).unwrap() == -a;
        }
    }
    for _ in 0..10 {
        let u = random_family(3, 2, &mut rng);
        let v = random_family(3, 2, &mut rng);
        let f = det_overlap(&u, &v).norm_sqr() / (det_overlap(&u, &u).re * det_overlap(&v, &v).re);
        let oracle = f.sqrt().min(1.0).acos();
        dist = dist.max((subspace_distance_exact(&u, &v).unwrap() - oracle).abs());
        // U gets a member orthogonal to span V, so the angle is a right angle
        let vq = v.to_matrix().qr().q();
        let r = DVector::from_vec(random_amplitudes(8, &mut rng));
        let w = &r - &vq * (vq.adjoint() * &r);
        let u_perp = BasisFamily::new(vec![
            u.member(0).clone(),
            AmplitudeState::from_vector(3, &w, "perp").unwrap(),
        ])
        .unwrap();
        right = right.max((subspace_distance_exact(&u_perp, &v).unwrap() - std::f64::consts::FRAC_PI_2).abs());
    }
    Outcome::new(
        cob <= 1e-12 && antisym_ok && dist <= 1e-9 && right <= 1e-9,
        format!(
            "det B factor {cob:.1e}, swap sign exact: {antisym_ok}, distance vs overlap oracle {dist:.1e}, π/2 case {right:.1e}"
        ),
    )
}

// 5. Linear TDVP residual and gauge invariance.
fn linear_tdvp() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut res, mut gauge_res, mut gauge_obs) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let n = rng.gen_range(3..=5);
        let m = rng.gen_range(2..=4);
        let op = random_operator(n, &mut rng);
        let mx = magnetization_x(n).unwrap();
        let fam = random_family(n, m, &mut rng);
        let pack = exact_gram_pack(&fam, &[("H", &op), ("Mx", &mx)]).unwrap();
        let gh = pack.op("H").unwrap();
        let alpha = random_amplitudes(m, &mut rng);
        let r = tdvp_residual(&pack.g, gh, &alpha).unwrap();
        res = res.max(r);
        let z = c(rng.gen_range(0.2..3.0), rng.gen_range(-3.0..3.0));
        let scaled: Vec<C64> = alpha.iter().map(|a| a * z).collect();
        gauge_res = gauge_res.max((tdvp_residual(&pack.g, gh, &scaled).unwrap() - r).abs());
        let mmat = assemble_rayleigh(&pack, "H", XP).unwrap().matrix;
        let times = [0.0, 0.1, 0.25, 0.5];
        let opts = BridgeOptions::default();
        let ta = bridge_solve(&mmat, Some(&alpha), &times, &opts).unwrap();
        let tb = bridge_solve(&mmat, Some(&scaled), &times, &opts).unwrap();
        for label in ["H", "Mx"] {
            let oa = bridge_observable(&pack.g, pack.op(label).unwrap(), &ta).unwrap();
            let ob = bridge_observable(&pack.g, pack.op(label).unwrap(), &tb).unwrap();
            for (x, y) in oa.values.iter().zip(&ob.values) {
                gauge_obs = gauge_obs.max((x - y).abs());
            }
        }
    }
    Outcome::new(
        res < 1e-10 && gauge_res < 1e-10 && gauge_obs < 1e-10,
        format!("max residual {res:.1e}; under α → zα residual moves {gauge_res:.1e}, observables {gauge_obs:.1e}"),
    )
}

/// Basis family, exact references and Bridge trajectory for the field-quench setup.
struct Quench {
    report: GenerationReport,
    family: BasisFamily,
    pack: XGramPack,
    evolver: ExactEvolver,
    psi0: AmplitudeState,
    mx: OperatorTerms,
    bridge: Vec<f64>,
    optimal: Vec<f64>,
    elapsed: Duration,
}

const QUENCH_SITES: usize = 10;
/// Twice the critical field of the chain with J = 1.
const QUENCH_FIELD: f64 = 2.0;
const QUENCH_STEPS: usize = 27;

fn quench(scheme: &str, noise: Noise) -> Quench {
    let start = Instant::now();
    let h = build_tfim(Geometry::chain(QUENCH_SITES, Boundary::Periodic), 1.0, QUENCH_FIELD).unwrap();
    let mx = magnetization_x(QUENCH_SITES).unwrap();
    let psi0 = uniform_state(QUENCH_SITES).unwrap();
    let delta = 0.05 / QUENCH_FIELD;
    let scheme: SchemeSpec = scheme.parse().unwrap();
    let (family, report) = generate_basis(&h, &psi0, delta, QUENCH_STEPS, &scheme, noise, 11).unwrap();
    let pack = exact_gram_pack_xp(&family, &[("H", &h), ("Mx", &mx)], 200).unwrap();
    let traj = bridge_solve_xp(&pack.rayleigh("H").unwrap(), None, &report.times, &BridgeOptions::default(), "exact")
        .unwrap();
    let evolver = ExactEvolver::new(&h).unwrap();
    let oracle: Vec<AmplitudeState> = report.times.iter().map(|&t| evolver.evolve(&psi0, t).unwrap()).collect();
    let bridge = bridge_infidelity(&traj, &family, &oracle).unwrap();
    let optimal = oracle
        .iter()
        .map(|psi| optimal_in_subspace_xp(&pack, &family, psi).unwrap())
        .collect();
    Quench {
        report,
        family,
        pack,
        evolver,
        psi0,
        mx,
        bridge,
        optimal,
        elapsed: start.elapsed(),
    }
}

/// Worst bridge/basis ratio, final improvement and final bridge/optimal ratio.
fn quench_figures(q: &Quench) -> (f64, f64, f64) {
    let worst = q
        .bridge
        .iter()
        .zip(&q.report.infidelity)
        .skip(1)
        .map(|(b, r)| b / r)
        .fold(0.0, f64::max);
    let k = QUENCH_STEPS;
    (worst, q.report.infidelity[k] / q.bridge[k], q.bridge[k] / q.optimal[k])
}

// 6. Bridge removes most of the splitting error of a trotter2 basis.
fn discretization_rescue(q: &Quench) -> Outcome {
    let k = QUENCH_STEPS;
    let (worst, improvement, vs_opt) = quench_figures(q);
    // at t = 0 both are the initial state; equality up to rounding of the fidelity
    let at_zero = q.bridge[0] <= q.report.infidelity[0] + 1e-14;
    let a = at_zero && worst <= 1.0;
    let b = improvement >= 100.0;
    let cc = vs_opt <= 10.0;
    let ceiling = q.report.infidelity[k] / q.optimal[k];
    let slpe = quench("slpe2", Noise::None);
    let (_, slpe_improvement, slpe_vs_opt) = quench_figures(&slpe);
    Outcome::new(
        a && b && cc && q.elapsed < Duration::from_secs(600),
        format!(
            "(a) {} worst bridge/basis {worst:.3}; (b) {} improvement {improvement:.1}x; (c) {} bridge/optimal {vs_opt:.2}; {:.1?}",
            if a { "ok" } else { "FAIL" },
            if b { "ok" } else { "FAIL" },
            if cc { "ok" } else { "FAIL" },
            q.elapsed
        ),
    )
    .detail(format!(
        "final infidelity: basis {:.3e}, bridge {:.3e}, optimal in span {:.3e}",
        q.report.infidelity[k], q.bridge[k], q.optimal[k]
    ))
    .detail(format!("largest improvement any subspace method can reach here: {ceiling:.1}x"))
    .detail(format!(
        "same setup with an slpe2 basis: improvement {slpe_improvement:.0}x, bridge/optimal {slpe_vs_opt:.2} (info)"
    ))
}

// 7. Unstructured noise on exact states is not corrected.
fn optimization_error() -> Outcome {
    let q = quench("exact", Noise::Gaussian { eps: 1e-3 });
    let k = QUENCH_STEPS;
    let improvement = q.report.infidelity[k] / q.bridge[k];
    let vs_opt = q.bridge[k] / q.optimal[k];
    Outcome::new(
        improvement < 10.0 && vs_opt <= 10.0,
        format!("improvement {improvement:.2}x, bridge/optimal {vs_opt:.3}"),
    )
    .detail(format!(
        "final infidelity: basis {:.3e}, bridge {:.3e}, optimal in span {:.3e}",
        q.report.infidelity[k], q.bridge[k], q.optimal[k]
    ))
}

// 8. Observables between basis times stay as accurate as at the basis times.
fn refined_grid(q: &Quench) -> Outcome {
    const REFINE: usize = 10;
    let times = refine_grid(&q.report.times, REFINE, 0.0).unwrap();
    let traj = bridge_solve_xp(&q.pack.rayleigh("H").unwrap(), None, &times, &BridgeOptions::default(), "exact")
        .unwrap();
    let series = bridge_observable_xp(&q.pack, "Mx", &traj).unwrap();
    let dev: Vec<f64> = times
        .iter()
        .zip(&series.values)
        .map(|(&t, v)| (v - exact_mx(q, t)).abs())
        .collect();
    // the original states carry the reference error at each grid time
    let basis_dev: Vec<f64> = (0..=QUENCH_STEPS)
        .map(|k| {
            let phi = q.family.member(k);
            (phi.expectation(&q.mx).unwrap() - exact_mx(q, times[k * REFINE])).abs()
        })
        .collect();
    let mut worst = 0.0f64;
    let mut worst_self = 0.0f64;
    for (i, d) in dev.iter().enumerate() {
        if i % REFINE == 0 {
            continue;
        }
        let k = i / REFINE;
        worst = worst.max(d / basis_dev[k].max(basis_dev[k + 1]));
        worst_self = worst_self.max(d / dev[k * REFINE].max(dev[(k + 1) * REFINE]));
    }
    let bridge_grid = (0..=QUENCH_STEPS).map(|k| dev[k * REFINE]).fold(0.0, f64::max);
    let all_dev = dev.iter().cloned().fold(0.0, f64::max);
    let basis_max = basis_dev.iter().cloned().fold(0.0, f64::max);
    Outcome::new(
        worst <= 2.0,
        format!(
            "worst refined bridge deviation / adjacent basis-state deviation = {worst:.3} over {} points",
            times.len()
        ),
    )
    .detail(format!(
        "max |ΔM_x|: basis states {basis_max:.2e}, bridge on basis grid {bridge_grid:.2e}, bridge on refined grid {all_dev:.2e}"
    ))
    .detail(format!(
        "info: against the bridge's own deviation at adjacent grid points the worst ratio is {worst_self:.3}"
    ))
}

fn exact_mx(q: &Quench, t: f64) -> f64 {
    q.evolver.evolve(&q.psi0, t).unwrap().expectation(&q.mx).unwrap()
}

// 9. Ground states in between anchor fields from a fixed family.
fn ground_state_interpolation() -> Outcome {
    let geo = Geometry::chain(12, Boundary::Open);
    let (zz, x) = tfim_parts(geo.clone()).unwrap();
    let ground = |h: f64| lanczos_ground_state(&build_tfim(geo.clone(), 1.0, h).unwrap(), 1e-10, 9).unwrap().1;
    let anchors: Vec<f64> = (0..9).map(|i| 0.5 + 1.5 * i as f64 / 8.0).collect();
    let states: Vec<AmplitudeState> = anchors.iter().map(|&h| ground(h)).collect();
    let family = BasisFamily::new(states.clone()).unwrap();
    let pack = exact_gram_pack(&family, &[("ZZ", &zz), ("X", &x)]).unwrap();
    let interp = GroundStateInterpolator::new(&[&pack], &["ZZ", "X"], XP).unwrap();
    let state_at = |h: f64| reconstruct(&family, &interp.query(&[1.0, h]).unwrap().alpha).unwrap();
    let anchor_err = anchors
        .iter()
        .zip(&states)
        .map(|(&h, s)| infidelity(&state_at(h), s).unwrap())
        .fold(0.0, f64::max);
    // 51 and 8 are coprime, so no query lands on an anchor
    let queries: Vec<f64> = (1..=50).map(|i| 0.5 + 1.5 * i as f64 / 51.0).collect();
    let mut wins = 0;
    let mut worst = 0.0f64;
    for &h in &queries {
        let exact = ground(h);
        let fi = infidelity(&state_at(h), &exact).unwrap();
        let nearest = anchors
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - h).abs().total_cmp(&(b.1 - h).abs()))
            .unwrap()
            .0;
        wins += usize::from(fi <= infidelity(&states[nearest], &exact).unwrap());
        worst = worst.max(fi);
    }
    Outcome::new(
        wins * 10 >= queries.len() * 9 && anchor_err < 1e-10,
        format!("interpolation beats the nearest anchor at {wins}/50 queries; anchors reproduced to {anchor_err:.1e}"),
    )
    .detail(format!("worst interpolated infidelity {worst:.2e}"))
}

// 10. Determinant-state estimator against sum-of-states with pseudo-inverse.
fn estimator_bench() -> Outcome {
    const SAMPLES_PER_CHAIN: usize = 12_500;
    let h = build_tfim(Geometry::chain(8, Boundary::Open), 1.0, 2.0).unwrap();
    let psi0 = uniform_state(8).unwrap();
    let scheme: SchemeSpec = "trotter2".parse().unwrap();
    let (family, report) = generate_basis(&h, &psi0, 0.025, 20, &scheme, Noise::Gaussian { eps: 1e-4 }, 1).unwrap();
    let cond = condition_number(&exact_gram_pack_xp(&family, &[], 200).unwrap().g.to_c64());
    let evolver = ExactEvolver::new(&h).unwrap();
    let oracle: Vec<AmplitudeState> = report.times.iter().map(|&t| evolver.evolve(&psi0, t).unwrap()).collect();
    let last = report.times.len() - 1;
    let final_infidelity = |m: &DMatrix<C64>| -> f64 {
        match bridge_solve(m, None, &report.times, &BridgeOptions::default()) {
            Ok(t) => bridge_infidelity(&t, &family, &oracle).unwrap()[last],
            Err(_) => 1.0,
        }
    };
    let cfg = DetSamplerConfig::new(8, SAMPLES_PER_CHAIN, 10);
    let det = final_infidelity(&estimate_det_state(&family, &h, "H", &cfg).unwrap().matrix);
    let sos = estimate_sum_of_states(&family, &[("H", &h)], &cfg).unwrap();
    let mut out = Vec::new();
    let mut best = f64::INFINITY;
    for rcond in [1e-9, 1e-11, 1e-13] {
        let f = final_infidelity(&assemble_rayleigh(&sos, "H", AssemblyPolicy::Pinv { rcond }).unwrap().matrix);
        best = best.min(f);
        out.push(format!("{:<26}{f:.3e}", format!("sum-of-states pinv({rcond:.0e})")));
    }
    let sos_xp = final_infidelity(&assemble_rayleigh(&sos, "H", XP).unwrap().matrix);
    let m = family.m();
    let mut o = Outcome::new(
        cond >= 1e8 && m >= 20 && det <= 3.0 * best,
        format!("det-state {det:.3e} vs best pinv {best:.3e} (ratio {:.2}); cond(G) {cond:.1e}, m = {m}", det / best),
    )
    .detail(format!("{:<26}final Bridge infidelity at {} samples", "estimator", cfg.total_samples()))
    .detail(format!("determinant-state         {det:.3e}"));
    for line in out {
        o = o.detail(line);
    }
    o.detail(format!("sum-of-states xp(200)     {sos_xp:.3e}"))
        .detail(format!("raw basis                 {:.3e}", report.infidelity[last]))
}

// 11. The m-copy chain samples |det Φ|².
fn sampler_chi_square() -> Outcome {
    let fam = random_family(4, 2, &mut ChaCha8Rng::seed_from_u64(11));
    let weights: Vec<f64> = MultiConfig::all(4, 2)
        .map(|s| det_amplitude(&fam, &s).unwrap().norm_sqr())
        .collect();
    let z: f64 = weights.iter().sum();
    let cfg = DetSamplerConfig::new(16, 62_500, 11).with_thin(100);
    let samples = sample_chain(&fam, &cfg).unwrap();
    let mut counts = vec![0usize; weights.len()];
    for s in samples.iter() {
        counts[s.index()] += 1;
    }
    let total = samples.len() as f64;
    // bins with expected count below 5 are pooled
    let (mut chi2, mut bins) = (0.0, 0usize);
    let (mut pool_obs, mut pool_exp) = (0.0, 0.0);
    let mut stray = 0usize;
    for (w, &o) in weights.iter().zip(&counts) {
        let e = total * w / z;
        if *w == 0.0 {
            stray += o;
        } else if e < 5.0 {
            pool_obs += o as f64;
            pool_exp += e;
        } else {
            chi2 += (o as f64 - e).powi(2) / e;
            bins += 1;
        }
    }
    if pool_exp > 0.0 {
        chi2 += (pool_obs - pool_exp).powi(2) / pool_exp;
        bins += 1;
    }
    let dof = (bins - 1) as f64;
    let p = 1.0 - ChiSquared::new(dof).unwrap().cdf(chi2);
    Outcome::new(
        p > 0.01 && stray == 0,
        format!("χ² = {chi2:.1} on {dof} dof, p = {p:.3}, {} samples", samples.len()),
    )
    .detail(format!("samples on zero-weight configurations: {stray}"))
}

// 12. One-step error slopes of the product schemes.
fn scheme_order() -> Outcome {
    let deltas = [0.04, 0.02, 0.01, 0.005];
    let mut worst = 0.0f64;
    let mut lines = Vec::new();
    for name in ["lpe1", "lpe2", "trotter2"] {
        let spec: SchemeSpec = name.parse().unwrap();
        let mut slopes = Vec::new();
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1200 + seed);
            let a = random_matrix(6, 6, &mut rng);
            let h = (&a + a.adjoint()) * c(0.5, 0.0);
            let gen = DenseGenerator::new(h.clone()).unwrap();
            let pts: Vec<(f64, f64)> = deltas
                .iter()
                .map(|&d| {
                    let e = (scheme_step_matrix(&spec, &gen, d).unwrap() - dense_propagator(&h, d)).norm();
                    (d.ln(), e.ln())
                })
                .collect();
            let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
            let num: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
            let den: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
            let s = num / den;
            worst = worst.max((s - (spec.order + 1) as f64).abs());
            slopes.push(format!("{s:.3}"));
        }
        lines.push(format!("{name}: expected {}, slopes {}", spec.order + 1, slopes.join(" ")));
    }
    let mut o = Outcome::new(worst <= 0.2, format!("largest slope deviation {worst:.3}"));
    for l in lines {
        o = o.detail(l);
    }
    o
}

fn run(id: u32, name: &str, f: impl FnOnce() -> Outcome) -> (u32, bool) {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Outcome::new(false, format!("panicked: {msg}"))
    });
    let known = KNOWN_FAILURES.iter().find(|(k, _)| *k == id);
    let tag = match (outcome.pass, known) {
        (true, _) => "PASS",
        (false, Some(_)) => "FAIL (known)",
        (false, None) => "FAIL",
    };
    println!("{tag} [{id:>2}] {name}: {} ({:.1?})", outcome.summary, start.elapsed());
    for d in &outcome.details {
        println!("         {d}");
    }
    if let (false, Some((_, why))) = (outcome.pass, known) {
        println!("         known failure: {why}");
    }
    (id, outcome.pass || known.is_some())
}

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |id: u32| selected.is_empty() || selected.contains(&id);
    let mut results = Vec::new();
    let mut push = |id: u32, name: &str, f: &dyn Fn() -> Outcome| {
        if wanted(id) {
            results.push(run(id, name, f));
        }
    };
    push(1, "Rayleigh oracle equivalence", &rayleigh_oracle_equivalence);
    push(2, "zero-variance eigenvector family", &zero_variance);
    push(3, "interlacing and trace", &interlacing_and_trace);
    push(4, "determinant-state identities", &determinant_identities);
    push(5, "linear TDVP and gauge", &linear_tdvp);
    let q = (wanted(6) || wanted(8)).then(|| quench("trotter2", Noise::None));
    if let Some(q) = &q {
        push(6, "discretization-error rescue", &|| discretization_rescue(q));
    }
    push(7, "optimization-error non-rescue", &optimization_error);
    if let Some(q) = &q {
        push(8, "refined-grid observables", &|| refined_grid(q));
    }
    push(9, "ground-state interpolation", &ground_state_interpolation);
    push(10, "estimator bench", &estimator_bench);
    push(11, "sampler χ² test", &sampler_chi_square);
    push(12, "scheme order", &scheme_order);
    let failed: Vec<u32> = results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    let passed = results.len() - failed.len();
    println!("acceptance: {passed}/{} criteria without unexpected failure", results.len());
    if !failed.is_empty() {
        println!("unexpected failures: {failed:?}");
        std::process::exit(1);
    }
}
