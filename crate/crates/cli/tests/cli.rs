use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bridge(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bridge"))
        .args(args)
        .current_dir(dir)
        .env_remove("BRIDGE_OUT_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = bridge(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn two_site_dump_has_zz_diagonal() {
    let dir = TempDir::new().unwrap();
    let out = ok(
        dir.path(),
        &["model", "--model", "tfim", "--geometry", "chain:2:open", "--J", "1", "--h", "0", "--dump"],
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let m: Vec<Vec<f64>> = text
        .lines()
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(m.len(), 4);
    let diag: Vec<f64> = (0..4).map(|i| m[i][i]).collect();
    assert_eq!(diag, vec![-1.0, 1.0, 1.0, -1.0]);
    assert!((0..4).all(|i| (0..4).all(|j| i == j || m[i][j] == 0.0)));
}

#[test]
fn usage_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let out = bridge(dir.path(), &["model", "--geometry", "chain:2:open", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(bridge(dir.path(), &["frobnicate"]).status.code(), Some(2));
    let bad_geometry = bridge(dir.path(), &["model", "--geometry", "ring:4:open"]);
    assert_eq!(bad_geometry.status.code(), Some(2));
    let missing = bridge(
        dir.path(),
        &["rayleigh", "--family", "absent.qsv", "--geometry", "chain:3:open", "--out", "r.json"],
    );
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("absent.qsv"));
}

#[test]
fn numerical_failures_exit_3() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &["model", "--geometry", "chain:4:open", "--h", "1", "--ground-state", "g.qsv"]);
    // a repeated member makes G exactly singular
    let out = bridge(
        d,
        &["rayleigh", "--family", "g.qsv,g.qsv", "--geometry", "chain:4:open", "--estimator", "exact", "--out", "r.json"],
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn quench_pipeline_reproduces_the_bridge_gain() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "generate-basis", "--geometry", "chain:10:periodic", "--J", "1", "--h", "2", "--delta", "0.025",
            "--steps", "27", "--scheme", "trotter2", "--seed", "11", "--out", "basis",
        ],
    );
    let manifest = json(&d.join("basis/manifest.json"));
    let files = manifest["report"]["files"].as_array().unwrap();
    assert_eq!(files.len(), 28);
    assert!(d.join("basis/basis_027.qsv").exists());
    assert!(d.join("basis/config.json").exists());
    let basis_final = manifest["report"]["infidelity"][27].as_f64().unwrap();

    ok(d, &["bridge", "--manifest", "basis/manifest.json", "--obs", "mx", "--out", "traj.csv", "--json", "traj.json"]);
    let (header, rows) = csv(&d.join("traj.csv"));
    assert_eq!(header, ["t", "alpha_norm", "obs_Mx", "infidelity"]);
    assert_eq!(rows.len(), 271);
    let last = &rows[270];
    assert!((last[0] - 27.0 * 0.025).abs() < 1e-12);
    assert!(basis_final / last[3] > 20.0, "basis {basis_final:e}, Bridge {:e}", last[3]);
    assert!(rows.iter().all(|r| r[3] < 1e-6));
    assert_eq!(rows[0][2], 1.0);
    let traj = json(&d.join("traj.json"));
    assert_eq!(traj["alphas"].as_array().unwrap().len(), 271);
}

#[test]
fn rayleigh_file_route_matches_direct_route() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "generate-basis", "--geometry", "chain:6:open", "--h", "2", "--delta", "0.05", "--steps", "8",
            "--scheme", "lpe2", "--out", "b",
        ],
    );
    ok(d, &["rayleigh", "--manifest", "b/manifest.json", "--estimator", "exact", "--out", "R.json"]);
    let r = json(&d.join("R.json"));
    assert_eq!(r["matrix"].as_array().unwrap().len(), 9);
    assert!(r["matrix_xp"].is_object());
    ok(d, &["bridge", "--manifest", "b/manifest.json", "--out", "direct.csv"]);
    ok(d, &["bridge", "--manifest", "b/manifest.json", "--rayleigh", "R.json", "--out", "file.csv"]);
    assert_eq!(fs::read(d.join("direct.csv")).unwrap(), fs::read(d.join("file.csv")).unwrap());
}

#[test]
fn sampled_estimate_reports_errors_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "generate-basis", "--geometry", "chain:6:open", "--h", "1.5", "--delta", "0.05", "--steps", "3",
            "--noise", "g:1e-3", "--seed", "4", "--out", "b",
        ],
    );
    let args = [
        "rayleigh", "--manifest", "b/manifest.json", "--estimator", "det", "--samples", "2000", "--chains", "4",
        "--seed", "9", "--out", "det.json",
    ];
    ok(d, &args);
    let first = fs::read(d.join("det.json")).unwrap();
    let est = json(&d.join("det.json"));
    assert_eq!(est["samples"].as_u64(), Some(8000));
    assert!(est["std_error"].is_array());
    ok(d, &["rerun", "det.config.json"]);
    assert_eq!(fs::read(d.join("det.json")).unwrap(), first);

    ok(d, &["rayleigh", "--manifest", "b/manifest.json", "--estimator", "exact", "--out", "exact.json"]);
    let exact = json(&d.join("exact.json"));
    let diff = (0..4)
        .map(|k| {
            let a = est["eigenvalues"][k][0].as_f64().unwrap();
            let b = exact["eigenvalues"][k][0].as_f64().unwrap();
            (a - b).abs()
        })
        .fold(0.0, f64::max);
    assert!(diff < 0.5, "eigenvalue deviation {diff}");
}

#[test]
fn snapshots_rerun_byte_identically() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let outdir = d.join("outputs");
    let status = Command::new(env!("CARGO_BIN_EXE_bridge"))
        .args([
            "generate-basis", "--geometry", "chain:5:open", "--h", "1.2", "--delta", "0.1", "--steps", "4",
            "--noise", "g:1e-3", "--seed", "2", "--out", "basis",
        ])
        .current_dir(d)
        .env("BRIDGE_OUT_DIR", &outdir)
        .env("RUST_LOG", "warn")
        .status()
        .unwrap();
    assert!(status.success());
    assert!(outdir.join("basis/manifest.json").exists());
    let config = json(&outdir.join("basis/config.json"));
    let recorded = config["command"]["generate-basis"]["out"].as_str().unwrap();
    assert_eq!(Path::new(recorded), outdir.join("basis"));

    let manifest = outdir.join("basis/manifest.json");
    let manifest = manifest.to_str().unwrap();
    ok(d, &["bridge", "--manifest", manifest, "--obs", "mx", "--grid-refine", "4", "--extrapolate", "0.2", "--out", "t.csv"]);
    let first = fs::read(d.join("t.csv")).unwrap();
    assert!(d.join("t.log").exists());
    ok(d, &["rerun", "t.config.json"]);
    assert_eq!(fs::read(d.join("t.csv")).unwrap(), first);
    let (_, rows) = csv(&d.join("t.csv"));
    assert_eq!(rows.len(), 4 * 4 + 1 + 8);
}

#[test]
fn interpolation_is_exact_at_anchors() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &["model", "--geometry", "chain:6:open", "--part", "zz", "--out", "zz.json"]);
    ok(d, &["model", "--geometry", "chain:6:open", "--part", "x", "--out", "x.json"]);
    let mut files = Vec::new();
    for h in ["0.5", "1", "1.5"] {
        let name = format!("g{h}.qsv");
        ok(d, &["model", "--geometry", "chain:6:open", "--h", h, "--ground-state", &name]);
        files.push(name);
    }
    let family = files.join(",");
    ok(d, &["gs-interpolate", "--family", &family, "--parts", "zz.json,x.json", "--grid", "0.5:1.5:5", "--out", "c.csv"]);
    let (header, rows) = csv(&d.join("c.csv"));
    assert_eq!(header, ["gamma", "mu0", "infidelity_vs_exact", "e0_exact"]);
    for k in [0, 2, 4] {
        assert!(rows[k][2] < 1e-10, "anchor {}: {:e}", rows[k][0], rows[k][2]);
        assert!((rows[k][1] - rows[k][3]).abs() < 1e-9);
    }
    for r in &rows {
        assert!(r[1] >= r[3] - 1e-9);
    }
}

#[test]
fn distance_and_excited_reports() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    for h in ["0.5", "1.5"] {
        ok(d, &["model", "--geometry", "chain:4:open", "--h", h, "--ground-state", &format!("g{h}.qsv")]);
    }
    ok(d, &["distance", "--u", "g0.5.qsv", "--v", "g0.5.qsv", "--out", "same.json"]);
    assert!(json(&d.join("same.json"))["distance"].as_f64().unwrap() < 1e-7);
    ok(d, &["distance", "--u", "g0.5.qsv", "--v", "g1.5.qsv", "--out", "exact.json"]);
    ok(d, &["distance", "--u", "g0.5.qsv", "--v", "g1.5.qsv", "--method", "mc", "--samples", "4000", "--out", "mc.json"]);
    let exact = json(&d.join("exact.json"))["distance"].as_f64().unwrap();
    let mc = json(&d.join("mc.json"));
    let (est, se) = (mc["distance"].as_f64().unwrap(), mc["std_error"].as_f64().unwrap());
    assert!((est - exact).abs() < 5.0 * se + 1e-3, "{est} ± {se} vs {exact}");

    ok(
        d,
        &["excited", "--family", "g0.5.qsv,g1.5.qsv", "--geometry", "chain:4:open", "--h", "1", "--obs", "mx", "--out", "ex.json"],
    );
    let ex = json(&d.join("ex.json"));
    let values: Vec<f64> = ex["ritz"]["values"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(values.len(), 2);
    assert!(values[0] <= values[1]);
    assert_eq!(ex["observables"]["Mx"].as_array().unwrap().len(), 2);
}

#[test]
fn bench_table_lists_every_estimator() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(
        d,
        &["bench-estimators", "--geometry", "chain:6:open", "--h", "2", "--steps", "8", "--samples", "500", "--chains", "2", "--out", "bench.csv"],
    );
    let text = fs::read_to_string(d.join("bench.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("estimator,samples,wall_time_s,final_infidelity"));
    let names: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(
        names,
        [
            "det-state",
            "sum-of-states-pinv:1e-9",
            "sum-of-states-pinv:1e-11",
            "sum-of-states-pinv:1e-13",
            "sum-of-states-xp:200",
            "exact-xp",
            "basis"
        ]
    );
}
