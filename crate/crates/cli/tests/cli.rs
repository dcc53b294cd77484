use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use transport_core::ate::eif_ate;
use transport_core::cmr::cmr_estimate;
use transport_core::data::{save_csv, Mode};
use transport_core::nuisance::{fit_nuisances, ModelSpec, WeightChoice};
use transport_core::simlab::{gen_dataset, DgpSpec};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_transport-meta"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn transport-meta")
}

fn write_sim(dir: &Path, mode: Mode, n: usize) -> PathBuf {
    let data = gen_dataset(&DgpSpec::preset(mode), n, 11, 0).unwrap();
    let path = dir.join(format!("{mode:?}.csv"));
    save_csv(&data, &path).unwrap();
    path
}

fn report(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn estimate_ate_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_sim(dir.path(), Mode::Difference, 3000);
    let out = dir.path().join("ate.json");
    let o = run(&["estimate-ate", "--input", csv.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("psi_hat"));

    // Same pipeline through the library on the re-read file.
    let data = transport_core::data::load_csv(&csv, Mode::Difference).unwrap().data;
    let table = fit_nuisances(&data, &ModelSpec::linear(Mode::Difference, data.p()))
        .unwrap()
        .evaluate(&data)
        .unwrap();
    let lib = eif_ate(&data, &table, &WeightChoice::Optimal).unwrap();
    let r = report(&out);
    assert_eq!(r["psi_hat"].as_f64().unwrap(), lib.psi_hat);
    assert_eq!(r["se"].as_f64().unwrap(), lib.se.unwrap());
}

#[test]
fn estimate_cmr_runs_and_honours_ci_level() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_sim(dir.path(), Mode::Ratio, 3000);
    let out = dir.path().join("cmr.json");
    let o = run(&["estimate-cmr", "--input", csv.to_str().unwrap(), "--ci", "0.9", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    assert_eq!(r["ci_level"].as_f64().unwrap(), 0.9);

    let data = transport_core::data::load_csv(&csv, Mode::Ratio).unwrap().data;
    let table = fit_nuisances(&data, &ModelSpec::linear(Mode::Ratio, data.p()))
        .unwrap()
        .evaluate(&data)
        .unwrap();
    let lib = cmr_estimate(&data, &table, &WeightChoice::Optimal).unwrap();
    assert_eq!(r["psi_hat"].as_f64().unwrap(), lib.psi_hat);
}

#[test]
fn other_estimators_and_drlearner() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_sim(dir.path(), Mode::Difference, 2000);
    let input = csv.to_str().unwrap();
    for est in ["gformula", "ipw", "pooled", "armwise", "psi-sp"] {
        let o = run(&["estimate-ate", "--input", input, "--estimator", est]);
        assert!(o.status.success(), "{est}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = run(&["drlearner", "--input", input, "--basis", "1,x1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("x1"), "{stdout}");
}

#[test]
fn missing_column_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    std::fs::write(&csv, "g,s,a,x1\n0,1,1,0.3\n1,,,0.1\n").unwrap();
    let o = run(&["estimate-ate", "--input", csv.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains('y'));
    assert!(o.stdout.is_empty());
}

#[test]
fn negative_outcome_in_ratio_mode_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_sim(dir.path(), Mode::Ratio, 500);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let k = lines.iter().position(|l| l.starts_with("0,")).unwrap();
    let mut f: Vec<String> = lines[k].split(',').map(String::from).collect();
    f[3] = "-1.5".into();
    lines[k] = f.join(",");
    std::fs::write(&csv, lines.join("\n")).unwrap();
    let o = run(&["estimate-cmr", "--input", csv.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn bad_flags_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_sim(dir.path(), Mode::Difference, 300);
    let input = csv.to_str().unwrap();
    assert_eq!(run(&["estimate-ate", "--input", input, "--ci", "1.5"]).status.code(), Some(2));
    assert_eq!(run(&["estimate-ate", "--input", input, "--weights", "custom:-1,1"]).status.code(), Some(2));
    assert_eq!(run(&["simulate", "--preset", "table9"]).status.code(), Some(2));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
}

fn simulate(out: &Path, threads: &str) -> Output {
    run(&[
        "simulate",
        "--preset",
        "table1",
        "--sizes",
        "500",
        "--reps",
        "10",
        "--oracle-draws",
        "20000",
        "--threads",
        threads,
        "--out",
        out.to_str().unwrap(),
    ])
}

#[test]
fn simulate_smoke_and_thread_invariance() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("t1"), dir.path().join("t4"));
    let start = Instant::now();
    let o1 = simulate(&a, "1");
    assert!(start.elapsed().as_secs_f64() < 10.0, "took {:?}", start.elapsed());
    assert!(o1.status.success(), "{}", String::from_utf8_lossy(&o1.stderr));
    let o4 = simulate(&b, "4");
    assert!(o4.status.success());
    assert_eq!(o1.stdout, o4.stdout);
    for f in ["table1.csv", "table1.txt", "table1.json"] {
        let x = std::fs::read(a.join(f)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, std::fs::read(b.join(f)).unwrap(), "{f} differs across thread counts");
    }
    let csv = std::fs::read_to_string(a.join("table1.csv")).unwrap();
    assert!(csv.starts_with("stat,"));
    assert_eq!(csv.lines().count(), 6);
}
