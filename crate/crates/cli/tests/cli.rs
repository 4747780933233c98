use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_pwabc");

const BINOMIAL: &str = r#"{
  "model": {"id": "binomial", "trials": 100},
  "data": {"n": 6, "theta_true": [0.6], "seed": 3},
  "prior": {"kind": "gaussian", "mean": [0.0], "sd": [3.0]},
  "abc": {"m": 200, "seed": 5},
  "estimator": {"q_sweep": [0.5, 1.0, 2.0]}
}"#;

const CIR: &str = r#"{
  "model": {"id": "cir", "a": 0.5, "sigma": 0.15},
  "data": {"n": 4, "dt": 0.5, "theta_true": [1.0], "x0": [1.0], "seed": 2},
  "prior": {"kind": "uniform_box", "lower": [-5.0], "upper": [2.0]},
  "abc": {"m": 200, "epsilon": 0.05, "seed": 1}
}"#;

fn pwabc(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn pwabc")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn simulate_writes_dataset_and_sidecar() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", BINOMIAL);
    let out = tmp.path().join("sim");
    ok(&pwabc(&["simulate", "--config", s(&cfg), "--out", s(&out)]));
    let csv = fs::read_to_string(out.join("data.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("time,s1"));
    assert_eq!(csv.lines().count(), 7);
    let meta = json(&out.join("data.json"));
    assert_eq!(meta["model_id"], "binomial");
    assert_eq!(meta["theta_true"][0], 0.6);
    assert_eq!(meta["seed"], 3);

    // --seed replaces data.seed
    let other = tmp.path().join("sim2");
    ok(&pwabc(&["simulate", "--config", s(&cfg), "--out", s(&other), "--seed", "4"]));
    assert_eq!(json(&other.join("data.json"))["seed"], 4);
}

#[test]
fn infer_oracle_report_binomial() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", BINOMIAL);
    let run = tmp.path().join("run");
    let orc = tmp.path().join("oracle");
    ok(&pwabc(&["infer", "--config", s(&cfg), "--out", s(&run)]));
    for f in ["config.json", "data.csv", "run.json", "gaussian_summary.json", "kde_summary.json", "kde_lattice.csv", "log_marginal.json"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    for i in 2..=6 {
        let p = run.join(format!("factors/factor_{i:04}.csv"));
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next(), Some("theta_1"));
        assert_eq!(text.lines().count(), 201);
    }
    let rec = json(&run.join("run.json"));
    assert_eq!(rec["config"]["abc"]["m"], 200);
    assert_eq!(rec["factors"].as_array().unwrap().len(), 5);
    let ks = json(&run.join("kde_summary.json"));
    for key in ["mu_post", "sigma_post", "log_marginal", "per_factor"] {
        assert!(ks.get(key).is_some(), "kde summary lacks {key}");
    }
    let lattice = fs::read_to_string(run.join("kde_lattice.csv")).unwrap();
    assert_eq!(lattice.lines().next(), Some("theta_1,log_density"));

    ok(&pwabc(&["oracle", "--config", s(&cfg), "--out", s(&orc), "--data", s(&run.join("data.csv"))]));
    let o = json(&orc.join("oracle.json"));
    assert!(o["log_marginal_true"].as_f64().unwrap().is_finite());

    ok(&pwabc(&["report", s(&run), "--oracle", s(&orc)]));
    let rep = run.join("report");
    let div = fs::read_to_string(rep.join("divergence.csv")).unwrap();
    let mut lines = div.lines();
    assert_eq!(lines.next(), Some("backend,tv,kl"));
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        let tv: f64 = cells[1].parse().unwrap();
        assert!((0.0..=1.0).contains(&tv), "{line}");
    }
    let contours = fs::read_to_string(rep.join("contours.csv")).unwrap();
    for mass in ["0.05", "0.1", "0.5", "0.9", "0.95"] {
        assert!(contours.lines().any(|l| l.starts_with("kde,1,1,") && l.split(',').nth(3) == Some(mass)));
    }
    let svg = fs::read_to_string(rep.join("marginal_1.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 3);
    assert!(rep.join("log_marginal.csv").exists());
}

#[test]
fn report_without_oracle_leaves_divergences_empty() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", CIR);
    let run = tmp.path().join("run");
    ok(&pwabc(&["infer", "--config", s(&cfg), "--out", s(&run)]));
    let g = json(&run.join("gaussian_summary.json"));
    assert!(g["log_marginal"].as_f64().unwrap().is_finite());
    let rep = tmp.path().join("rep");
    ok(&pwabc(&["report", s(&run), "--out", s(&rep)]));
    let div = fs::read_to_string(rep.join("divergence.csv")).unwrap();
    assert_eq!(div.lines().next(), Some("backend,tv,kl"));
    assert!(div.lines().skip(1).all(|l| l.ends_with(",,")), "{div}");
}

#[test]
fn oracle_requires_an_exact_likelihood() {
    let tmp = TempDir::new().unwrap();
    let lv = r#"{
      "model": {"id": "lotka_volterra"},
      "data": {"n": 3, "theta_true": [1.0, 0.005, 0.6], "x0": [50, 100]},
      "prior": {"kind": "gaussian", "mean": [0, -5, 0], "sd": [1, 1, 1]},
      "abc": {"m": 10}
    }"#;
    let cfg = write_config(tmp.path(), "lv.json", lv);
    let o = pwabc(&["oracle", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_q_writes_one_marginal_per_q() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", BINOMIAL);
    let run = tmp.path().join("sweep");
    ok(&pwabc(&["sweep-q", "--config", s(&cfg), "--out", s(&run)]));
    let marginals: Vec<_> = fs::read_dir(run.join("sweep"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("marginal_q_"))
        .collect();
    assert_eq!(marginals.len(), 3, "{marginals:?}");
    let entries = json(&run.join("sweep.json"));
    assert_eq!(entries.as_array().unwrap().len(), 3);

    let run2 = tmp.path().join("sweep2");
    ok(&pwabc(&["sweep-q", "--config", s(&cfg), "--out", s(&run2), "--q", "0.25,4"]));
    assert_eq!(json(&run2.join("sweep.json")).as_array().unwrap().len(), 2);

    ok(&pwabc(&["report", s(&run)]));
    let csvs = fs::read_dir(run.join("report"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("marginal_q_"))
        .count();
    assert_eq!(csvs, 3);
}

#[test]
fn worker_count_does_not_change_artifacts() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", BINOMIAL);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&pwabc(&["infer", "--config", s(&cfg), "--out", s(&a), "--workers", "1"]));
    ok(&pwabc(&["infer", "--config", s(&cfg), "--out", s(&b), "--workers", "3"]));
    let mut files = vec![
        "data.csv".to_string(),
        "gaussian_summary.json".into(),
        "kde_summary.json".into(),
        "kde_lattice.csv".into(),
        "log_marginal.json".into(),
        "run.json".into(),
    ];
    files.extend((2..=6).map(|i| format!("factors/factor_{i:04}.csv")));
    for f in files {
        assert_eq!(fs::read(a.join(&f)).unwrap(), fs::read(b.join(&f)).unwrap(), "{f} differs");
    }
}

#[test]
fn single_factor_gaussian_backend() {
    let tmp = TempDir::new().unwrap();
    let text = BINOMIAL
        .replace("\"n\": 6", "\"n\": 2")
        .replace("\"q_sweep\": [0.5, 1.0, 2.0]", "\"backend\": \"gaussian\"");
    let cfg = write_config(tmp.path(), "c.json", &text);
    let run = tmp.path().join("run");
    ok(&pwabc(&["infer", "--config", s(&cfg), "--out", s(&run)]));
    assert!(!run.join("kde_summary.json").exists());
    let g = json(&run.join("gaussian_summary.json"));
    assert_eq!(g["per_factor"].as_array().unwrap().len(), 1);
    // with one factor the posterior is that factor's Gaussian fit
    assert_eq!(g["mu_post"][0], g["per_factor"][0]["mean"][0]);
}

#[test]
fn config_errors_exit_2() {
    let tmp = TempDir::new().unwrap();
    let bad = write_config(tmp.path(), "bad.json", "{\n  \"model\": {\"id\": \"binomial\",,}\n}");
    let o = pwabc(&["infer", "--config", s(&bad), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 2, column"), "{err}");

    let unknown = write_config(tmp.path(), "u.json", &BINOMIAL.replace("\"m\": 200", "\"m\": 200, \"tolerance\": 1"));
    let o = pwabc(&["infer", "--config", s(&unknown), "--out", s(&tmp.path().join("y"))]);
    assert_eq!(o.status.code(), Some(2));

    let missing = pwabc(&["infer", "--config", s(&tmp.path().join("nope.json")), "--out", s(&tmp.path().join("z"))]);
    assert_eq!(missing.status.code(), Some(2));

    let usage = pwabc(&["infer"]);
    assert_eq!(usage.status.code(), Some(2));
}

#[test]
fn existing_output_needs_force() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", BINOMIAL);
    let out = tmp.path().join("sim");
    ok(&pwabc(&["simulate", "--config", s(&cfg), "--out", s(&out)]));
    let again = pwabc(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(again.status.code(), Some(2));
    fs::write(out.join("notes.txt"), "keep").unwrap();
    ok(&pwabc(&["simulate", "--config", s(&cfg), "--out", s(&out), "--force"]));
    assert_eq!(fs::read_to_string(out.join("notes.txt")).unwrap(), "keep");
}

#[test]
fn runtime_failure_exits_1() {
    let tmp = TempDir::new().unwrap();
    let text = BINOMIAL.replace("\"m\": 200, \"seed\": 5", "\"m\": 200, \"seed\": 5, \"max_draws\": 300");
    let cfg = write_config(tmp.path(), "c.json", &text);
    let o = pwabc(&["infer", "--config", s(&cfg), "--out", s(&tmp.path().join("r"))]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}
