use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sr3_core::io::{read_columns, read_json};
use tempfile::tempdir;

fn sr3(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sr3")).args(args).output().expect("binary runs")
}

fn run_ok(args: &[&str]) {
    let out = sr3(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let (headers, cols) = read_columns(path).unwrap();
    let i = headers.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name} in {headers:?}"));
    cols[i].clone()
}

fn assert_same_files(a: &Path, b: &Path) {
    let mut names: Vec<_> = fs::read_dir(a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(!names.is_empty());
    for name in names {
        let (x, y) = (fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
        assert!(x == y, "{name:?} differs after replay");
    }
}

#[test]
fn unknown_method_is_a_usage_error() {
    let out = sr3(&["solve", "--problem", "diag", "--method", "newton"]);
    assert_eq!(out.status.code(), Some(2));
    let out = sr3(&["solve", "--problem", "heat"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gravity_solve_replays_bit_identically() {
    let dir = tempdir().unwrap();
    let first = dir.path().join("first");
    let f = first.to_str().unwrap();
    run_ok(&["solve", "--problem", "gravity", "--n", "64", "--method", "sr3", "--kappa", "1", "--tau", "auto", "--out", f]);
    for file in ["x.csv", "y.csv", "history.csv", "result.json", "run.json"] {
        assert!(first.join(file).exists(), "missing {file}");
    }
    let second = dir.path().join("second");
    run_ok(&["replay", first.join("run.json").to_str().unwrap(), "--out", second.to_str().unwrap()]);
    assert_same_files(&first, &second);
}

#[test]
fn diag_fista_closes_the_gap() {
    let dir = tempdir().unwrap();
    run_ok(&["solve", "--problem", "diag", "--method", "fista", "--tau", "5", "--out", dir.path().to_str().unwrap()]);
    let gap = column(&dir.path().join("history.csv"), "gap");
    assert!(*gap.last().unwrap() < 1e-6);
    let summary: serde_json::Value = read_json(dir.path().join("result.json")).unwrap();
    assert_eq!(summary["converged"], true);
}

#[test]
fn strict_non_convergence_exits_with_3() {
    let dir = tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = sr3(&["solve", "--problem", "gravity", "--n", "32", "--max-outer", "1", "--strict", "--out", d]);
    assert_eq!(out.status.code(), Some(3));
    // Without --strict the same run is a success with converged = false.
    run_ok(&["solve", "--problem", "gravity", "--n", "32", "--max-outer", "1", "--out", d]);
    let summary: serde_json::Value = read_json(dir.path().join("result.json")).unwrap();
    assert_eq!(summary["converged"], false);
}

#[test]
fn fista_rejects_general_l() {
    let dir = tempdir().unwrap();
    let out = sr3(&["solve", "--problem", "tv", "--method", "fista", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

fn relative_distance(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    diff / a.iter().map(|p| p * p).sum::<f64>().sqrt()
}

#[test]
fn exact_sr3_approaches_standard_form_as_kappa_grows() {
    let dir = tempdir().unwrap();
    let sf = dir.path().join("sf");
    run_ok(&["solve", "--problem", "tv", "--n", "40", "--method", "standard-form", "--tau", "2", "--gap-tol", "1e-12", "--out", sf.to_str().unwrap()]);
    let reference = column(&sf.join("x.csv"), "x");
    let mut distances = Vec::new();
    for kappa in ["1e3", "1e4"] {
        let ex = dir.path().join(kappa);
        run_ok(&["solve", "--problem", "tv", "--n", "40", "--method", "sr3-exact", "--kappa", kappa, "--tau", "2", "--delta", "1e-10", "--lsqr-atol", "1e-12", "--max-outer", "1000000", "--strict", "--out", ex.to_str().unwrap()]);
        distances.push(relative_distance(&reference, &column(&ex.join("x.csv"), "x")));
    }
    assert!(distances[1] < 0.5 * distances[0], "{distances:?}");
    assert!(distances[1] < 5e-2, "{distances:?}");
}

#[test]
fn diag_pareto_curves_are_ordered_in_kappa() {
    let dir = tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    run_ok(&["pareto", "--problem", "diag", "--kappa", "1e-2,1", "--kappa", "1e2,inf", "--points", "10", "--tau-max", "0.9", "--delta", "1e-10", "--eps", "1e-10", "--max-outer", "200000", "--gap-tol", "1e-12", "--out", d]);
    let corners: serde_json::Value = read_json(dir.path().join("corners.json")).unwrap();
    assert_eq!(corners.as_array().unwrap().len(), 4);
    let curves: Vec<(Vec<f64>, Vec<f64>)> = ["0.01", "1", "100", "inf"]
        .iter()
        .map(|k| {
            let path = dir.path().join(format!("pareto_kappa_{k}.csv"));
            (column(&path, "phi"), column(&path, "ok"))
        })
        .collect();
    // Large κ converges slowly on the small singular values; compare where both solves converged.
    let mut compared = 0;
    for pair in curves.windows(2) {
        let ((lo, lo_ok), (hi, hi_ok)) = (&pair[0], &pair[1]);
        for i in 0..lo.len() {
            if lo_ok[i] == 1.0 && hi_ok[i] == 1.0 {
                assert!(lo[i] <= hi[i] + 1e-8, "{} > {} at point {i}", lo[i], hi[i]);
                compared += 1;
            }
        }
    }
    assert!(compared >= 20, "only {compared} converged pairs");
    let second = dir.path().join("again");
    run_ok(&["replay", dir.path().join("run.json").to_str().unwrap(), "--out", second.to_str().unwrap()]);
    assert_same_files(&second, dir.path());
}

#[test]
fn empty_tau_grid_is_a_usage_error() {
    let dir = tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(sr3(&["pareto", "--problem", "diag", "--points", "0", "--out", d]).status.code(), Some(2));
    assert_eq!(sr3(&["pareto", "--problem", "diag", "--taus", "", "--out", d]).status.code(), Some(2));
    assert_eq!(sr3(&["pareto", "--problem", "diag", "--taus", "2,1", "--out", d]).status.code(), Some(2));
}

#[test]
fn gravity_spectrum_approaches_generalized_values() {
    let dir = tempdir().unwrap();
    run_ok(&["spectrum", "--problem", "gravity", "--n", "64", "--kappa", "1e-2,1,1e8", "--out", dir.path().to_str().unwrap()]);
    let fk_large = column(&dir.path().join("fk.csv"), "kappa_100000000");
    let mut ratio: Vec<f64> = column(&dir.path().join("gsv.csv"), "ratio").into_iter().filter(|r| r.is_finite()).collect();
    ratio.sort_by(|a, b| b.partial_cmp(a).unwrap());
    // L = D has a one-dimensional nullspace, so p = n - 1 and every value pairs with a finite ratio.
    assert_eq!(fk_large.len(), ratio.len());
    for (f, r) in fk_large.iter().zip(&ratio).take(10) {
        assert!((f - r).abs() <= 1e-4 * r, "{f} vs {r}");
    }
    // Fast decay is inherited from A.
    let fk_one = column(&dir.path().join("fk.csv"), "kappa_1");
    assert!(fk_one[fk_one.len() - 1] < 1e-8 * fk_one[0]);
    let hk = column(&dir.path().join("hk.csv"), "kappa_0.01");
    assert_eq!(hk.len(), 64);
}

#[test]
fn tomo_spectrum_has_sqrt_kappa_plateau() {
    let dir = tempdir().unwrap();
    run_ok(&["spectrum", "--problem", "tomo", "--n", "8", "--angles", "6", "--kappa", "1e-4", "--out", dir.path().to_str().unwrap()]);
    let fk = column(&dir.path().join("fk.csv"), "kappa_0.0001");
    // p = 2·8·7 = 112 rows of L and rank n - 1 = 63.
    let plateau = fk.iter().filter(|v| (*v - 1e-2).abs() < 1e-10).count();
    assert_eq!(plateau, 112 - 63);
    assert_eq!(sr3(&["spectrum", "--problem", "diag", "--kappa", "inf", "--out", dir.path().to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn iterations_rows_per_kappa() {
    let dir = tempdir().unwrap();
    run_ok(&["iterations", "--problem", "gravity", "--n", "32", "--kappa", "1", "--mode", "both", "--out", dir.path().to_str().unwrap()]);
    let exact = column(&dir.path().join("iterations_exact.csv"), "total_inner");
    let inexact = column(&dir.path().join("iterations_inexact.csv"), "total_inner");
    assert_eq!((exact.len(), inexact.len()), (1, 1));
    assert!(inexact[0] <= exact[0]);
    let cost = column(&dir.path().join("iterations_inexact.csv"), "total_cost");
    let outer = column(&dir.path().join("iterations_inexact.csv"), "outer");
    assert_eq!(cost[0], inexact[0] + outer[0]);
}

#[test]
fn export_writes_a_problem_directory() {
    let dir = tempdir().unwrap();
    run_ok(&["export", "--problem", "cs", "--seed", "3", "--out", dir.path().to_str().unwrap()]);
    let problem = sr3_core::problems::import_problem(dir.path()).unwrap();
    let direct = sr3_core::problems::compressed_sensing(101, 20, 2, 3).unwrap();
    assert_eq!(problem.b, direct.b);
    assert!(dir.path().join("run.json").exists());
}
