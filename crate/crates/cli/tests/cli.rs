use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
[problem]
kind = "gaussian"
mean = [1.0, -0.5]
covariance = [[1.0, 0.5], [0.5, 1.0]]
ground_truth = { samples = 1000, seed = 2 }

[kernel]
lengthscale = 1.0

[[method]]
kind = "tr_svi_at"

[[method]]
kind = "svgd"
step = 0.05

[run]
particles = 10
iterations = 3
seeds = [0, 1]
"#;

fn trsvi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trsvi"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = trsvi(args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("exp.toml");
    fs::write(&path, CONFIG).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn run_then_evaluate_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("run");
    let out_s = out.to_string_lossy();
    let table = ok(&["--workers", "1", "run", "--config", &cfg, "--out", &out_s]);
    assert!(table.contains("tr_svi_at"));
    assert!(out.join("svgd/seed_1/samples.csv").exists());

    let json = ok(&["evaluate", "--run", &out_s, "--json"]);
    let evaluated: serde_json::Value = serde_json::from_str(&json).unwrap();
    let stored: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(evaluated, stored);

    let gt = out.join("ground_truth.csv");
    let samples = out.join("tr_svi_at/seed_0/samples.csv");
    let direct = ok(&[
        "evaluate",
        "--ground-truth",
        &gt.to_string_lossy(),
        "--samples",
        &samples.to_string_lossy(),
        "--seed",
        "2",
        "--json",
    ]);
    let direct: serde_json::Value = serde_json::from_str(&direct).unwrap();
    assert_eq!(
        direct["results"][0]["mmd_squared_biased"],
        stored["methods"][0]["runs"][0]["mmd"]
    );
}

#[test]
fn seed_override_runs_one_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("run");
    ok(&[
        "run",
        "--config",
        &cfg,
        "--out",
        &out.to_string_lossy(),
        "--seed",
        "5",
    ]);
    assert!(out.join("svgd/seed_5").exists());
    assert!(!out.join("svgd/seed_0").exists());
}

#[test]
fn generate_and_export_marginals() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let gen = dir.path().join("gen");
    ok(&[
        "generate",
        "--config",
        &cfg,
        "--out",
        &gen.to_string_lossy(),
        "--ground-truth",
    ]);
    let problem = gen.join("problem.json");
    let gt = gen.join("ground_truth.csv");
    assert!(problem.exists() && gt.exists());

    let marg = dir.path().join("marg");
    let printed = ok(&[
        "export-marginals",
        "--samples",
        &gt.to_string_lossy(),
        "--problem",
        &problem.to_string_lossy(),
        "--factors",
        "1",
        "--out",
        &marg.to_string_lossy(),
    ]);
    assert!(printed.contains("factor_1.csv"));
    assert!(!marg.join("factor_0.csv").exists());
    let text = fs::read_to_string(marg.join("factor_1.csv")).unwrap();
    assert_eq!(text.lines().count(), 1001);
}

#[test]
fn bad_config_reports_field_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, CONFIG.replace("particles = 10", "particle = 10")).unwrap();
    let out = trsvi(&[
        "run",
        "--config",
        &path.to_string_lossy(),
        "--out",
        &dir.path().join("o").to_string_lossy(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.starts_with("error:") && err.contains("run.particle"),
        "{err}"
    );
}
