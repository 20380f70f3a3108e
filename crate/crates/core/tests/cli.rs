use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    [env!("CARGO_MANIFEST_DIR"), "..", "..", "configs"].iter().collect()
}

fn flowlab(config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowlab"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn identical_runs_write_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = flowlab(&configs().join("sphere_w2.toml"), out, &["--resolution", "100"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in [
        "wasserstein_monotonicity.csv",
        "wasserstein_monotonicity.verdict.txt",
        "wasserstein_monotonicity.convergence.csv",
    ] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let verdict = fs::read_to_string(a.join("wasserstein_monotonicity.verdict.txt")).unwrap();
    assert!(verdict.contains("verdict: PASS"));
    assert!(verdict.contains("source: resolution_study"));
    let csv = fs::read_to_string(a.join("wasserstein_monotonicity.csv")).unwrap();
    assert!(csv.starts_with("tau,value,"));
    assert_eq!(csv.lines().count(), 13);
}

#[test]
fn seed_controls_lemma_samples() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("lemma_sphere_ricci.toml");
    let run = |sub: &str, seed: &str| {
        let out = dir.path().join(sub);
        assert_eq!(code(&flowlab(&cfg, &out, &["--seed", seed])), 0);
        fs::read(out.join("lemma_sweep.csv")).unwrap()
    };
    let (a, b, c) = (run("a", "5"), run("b", "5"), run("c", "6"));
    assert_eq!(a, b);
    assert_ne!(a, c);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("tau,d,gap,margin,model,cost_id\n"));
    assert_eq!(text.lines().count(), 201);
}

#[test]
fn expected_violation_exits_zero_and_untagged_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let tagged = configs().join("sphere_violating.toml");
    let o = flowlab(&tagged, dir.path(), &["--resolution", "100"]);
    assert_eq!(code(&o), 0);
    let verdict = fs::read_to_string(dir.path().join("wasserstein_monotonicity.verdict.txt")).unwrap();
    assert!(verdict.contains("EXPECTED_VIOLATION"), "{verdict}");

    let untagged = dir.path().join("untagged.toml");
    fs::write(&untagged, fs::read_to_string(&tagged).unwrap().replace("expect_violation = true", "")).unwrap();
    let o = flowlab(&untagged, &dir.path().join("u"), &["--resolution", "100"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("super Ricci"));
}

#[test]
fn failed_check_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    // e^{2τ} s² grows in τ, which a K = 0 flow does not allow
    let cfg = dir.path().join("bad_cost.toml");
    fs::write(
        &cfg,
        "experiment = \"admissibility_report\"\n[flow]\nmodel = \"sphere\"\ndomain = [0.0, 1.0]\n[cost]\np = 2.0\nk = 1.0\n",
    )
    .unwrap();
    let o = flowlab(&cfg, dir.path(), &[]);
    assert_eq!(code(&o), 1);
    let csv = fs::read_to_string(dir.path().join("admissibility_report.csv")).unwrap();
    assert!(csv.contains("evolution,") && csv.contains("false"));
}

#[test]
fn configuration_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let good = configs().join("admissibility_sqrt.toml");
    assert_eq!(code(&flowlab(&good, dir.path(), &["--experiment", "no_such_experiment"])), 2);
    assert_eq!(code(&flowlab(&dir.path().join("missing.toml"), dir.path(), &[])), 2);
    let typo = dir.path().join("typo.toml");
    fs::write(&typo, fs::read_to_string(&good).unwrap().replace("[cost]", "[cost]\nexponent = 3.0")).unwrap();
    assert_eq!(code(&flowlab(&typo, dir.path(), &[])), 2);
    let big = configs().join("sphere_w1.toml");
    assert_eq!(code(&flowlab(&big, dir.path(), &["--resolution", "900"])), 2);
}

#[test]
fn experiment_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = flowlab(&configs().join("sphere_sqrt_cost.toml"), dir.path(), &["--experiment", "admissibility_report"]);
    assert_eq!(code(&o), 0);
    assert!(dir.path().join("admissibility_report.csv").exists());
    assert!(!dir.path().join("general_cost_monotonicity.csv").exists());
}
