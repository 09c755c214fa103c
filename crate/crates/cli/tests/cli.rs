use std::path::Path;
use std::process::Command;

use mfnuts_cli::{compare, run_experiment, ExperimentConfig};

fn config(dir: &Path, body: &str) -> ExperimentConfig {
    let text = format!("{{{body}, \"output_dir\": {:?}}}", dir.display().to_string());
    ExperimentConfig::from_json_str(&text).unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mfnuts"));
    c.env("RUST_LOG", "error").env_remove("MFNUTS_SEED");
    c
}

#[test]
fn mfnuts_run_writes_artifacts_and_counts_honestly() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(
        tmp.path(),
        r#""problem": "rosenbrock", "sampler": "mfnuts", "m_adapt": 300, "m_samples": 400, "n_chains": 2, "seed": 5"#,
    );
    let out = run_experiment(&cfg).unwrap();
    for f in
        ["samples_chain0.csv", "samples_chain1.csv", "curve_chain0.csv", "curve_chain1.csv", "metrics.json", "MANIFEST"]
    {
        assert!(tmp.path().join(f).exists(), "{f} missing");
    }
    let m = &out.metrics;
    let s = m.surrogate.as_ref().unwrap();
    assert!(m.chains.iter().all(|c| c.mess > 0.0));
    // offline cost: the 50-point design budget plus the charged test points
    assert!(s.high_evals <= 50 + 200 && s.high_evals > 200, "{}", s.high_evals);
    assert!(out.records.iter().all(|r| r.offline_hf_evals == s.high_evals));
    let online: u64 = out.records.iter().map(|r| r.total_hf_evals() - r.offline_hf_evals).sum();
    assert_eq!(m.hf_evals_counter, s.high_evals + online);

    let manifest = std::fs::read_to_string(tmp.path().join("MANIFEST")).unwrap();
    assert!(manifest.starts_with("status: complete"));
    let csv = std::fs::read_to_string(tmp.path().join("samples_chain0.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "index,theta_0,theta_1,log_density,accepted,hf_evals_cumulative");
    assert_eq!(lines.count(), 400);
}

#[test]
fn mh_records_acceptance_rate() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), r#""problem": "gaussian8d", "sampler": "mh", "m_adapt": 200, "m_samples": 2000"#);
    let out = run_experiment(&cfg).unwrap();
    let a = out.metrics.chains[0].acceptance_rate;
    assert!(a > 0.0 && a < 1.0, "{a}");
    assert_eq!(out.metrics.hf_evals_counter, 1 + 200 + 2000);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let body =
        r#""problem": "rosenbrock", "sampler": "nuts", "m_adapt": 200, "m_samples": 300, "n_chains": 2, "seed": 11"#;
    run_experiment(&config(a.path(), body)).unwrap();
    run_experiment(&config(b.path(), body)).unwrap();
    for f in ["samples_chain0.csv", "samples_chain1.csv", "metrics.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    // distinct per-chain seeds
    assert_ne!(
        std::fs::read(a.path().join("samples_chain0.csv")).unwrap(),
        std::fs::read(a.path().join("samples_chain1.csv")).unwrap()
    );
}

#[test]
fn saved_surrogate_is_reused() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("s.json");
    let body = format!(
        r#""problem": "rosenbrock", "sampler": "mfnuts", "m_adapt": 100, "m_samples": 200, "surrogate": {{"path": {:?}}}"#,
        path.display().to_string()
    );
    let first = run_experiment(&config(&tmp.path().join("a"), &body)).unwrap();
    assert!(path.exists());
    let second = run_experiment(&config(&tmp.path().join("b"), &body)).unwrap();
    assert!(!first.metrics.surrogate.as_ref().unwrap().loaded);
    assert!(second.metrics.surrogate.as_ref().unwrap().loaded);
    assert_eq!(first.records[0].samples, second.records[0].samples);
    // nothing was built the second time
    let r = &second.records[0];
    assert_eq!(second.metrics.hf_evals_counter, r.total_hf_evals() - r.offline_hf_evals);
}

#[test]
fn compare_single_config_reproduces_its_curve() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(
        &tmp.path().join("run"),
        r#""problem": "rosenbrock", "sampler": "mh", "m_adapt": 100, "m_samples": 500"#,
    );
    let out = tmp.path().join("cmp.csv");
    compare(std::slice::from_ref(&cfg), &out).unwrap();
    let cmp = std::fs::read_to_string(&out).unwrap();
    let curve = std::fs::read_to_string(tmp.path().join("run/curve_chain0.csv")).unwrap();
    let a: Vec<String> = cmp.lines().skip(1).map(|l| l.trim_start_matches("mh,").to_string()).collect();
    let b: Vec<String> = curve.lines().skip(1).map(String::from).collect();
    assert_eq!(cmp.lines().next().unwrap(), "sampler,hf_evals,mess");
    assert_eq!(a, b);
}

#[test]
fn invalid_config_exits_2_with_line_number() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write_config(
        tmp.path(),
        "bad.json",
        "{\n  \"problem\": \"rosenbrock\",\n  \"sampler\": \"mh\",\n  \"bogus\": 1\n}\n",
    );
    let out = bin().args(["run", "--config"]).arg(&p).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.json:4:"), "{err}");
}

#[test]
fn mismatched_compare_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let a = write_config(tmp.path(), "a.json", r#"{"problem": "rosenbrock", "sampler": "mh", "m_samples": 10}"#);
    let b = write_config(tmp.path(), "b.json", r#"{"problem": "gaussian8d", "sampler": "mh", "m_samples": 10}"#);
    let out = bin()
        .arg("compare")
        .arg("--configs")
        .arg(&a)
        .arg(&b)
        .arg("--out")
        .arg(tmp.path().join("c.csv"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sampler_failure_exits_1_and_marks_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!(
        r#"{{"problem": "rosenbrock", "sampler": "nuts", "m_adapt": 10, "m_samples": 10, "theta0": [1e200, 1e200], "output_dir": {:?}}}"#,
        tmp.path().join("out").display().to_string()
    );
    let p = write_config(tmp.path(), "c.json", &text);
    let out = bin().args(["run", "--config"]).arg(&p).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let manifest = std::fs::read_to_string(tmp.path().join("out/MANIFEST")).unwrap();
    assert!(manifest.starts_with("status: incomplete"), "{manifest}");
}

#[test]
fn seed_override_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |seed: Option<&str>, sub: &str| {
        let text = format!(
            r#"{{"problem": "rosenbrock", "sampler": "mh", "m_adapt": 10, "m_samples": 50, "seed": 1, "output_dir": {:?}}}"#,
            tmp.path().join(sub).display().to_string()
        );
        let p = write_config(tmp.path(), &format!("{sub}.json"), &text);
        let mut c = bin();
        if let Some(s) = seed {
            c.env("MFNUTS_SEED", s);
        }
        assert!(c.args(["run", "--config"]).arg(&p).status().unwrap().success());
        std::fs::read(tmp.path().join(sub).join("samples_chain0.csv")).unwrap()
    };
    let plain = run(None, "plain");
    let same = run(Some("1"), "same");
    let other = run(Some("2"), "other");
    assert_eq!(plain, same);
    assert_ne!(plain, other);
}

#[test]
fn build_surrogate_saves_without_sampling() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("sur.json");
    let text = format!(
        r#"{{"problem": "rosenbrock", "sampler": "mfnuts", "surrogate": {{"n_test": 50, "path": {:?}}}}}"#,
        path.display().to_string()
    );
    let p = write_config(tmp.path(), "s.json", &text);
    let out = bin().args(["build-surrogate", "--config"]).arg(&p).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = mfnuts_core::surrogate::MfSurrogate::load(&path).unwrap();
    assert_eq!(s.dim(), 2);
    assert!(!tmp.path().join("out").exists());
}
