use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tar2_cli::{parse_config, RunManifest};

fn tar2(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tar2"))
        .args(args)
        .output()
        .expect("spawn tar2")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = r#"{
  "version": 1,
  "redistributor": "tar2",
  "episodes": 120,
  "warmup_episodes": 40,
  "refit_period": 40,
  "model_buffer": 80,
  "model_epochs": 1,
  "model": {"d_model": 8, "n_heads": 2, "n_blocks": 1}
}"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_four_artifacts_and_reloadable_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("run");
    let o = tar2(&["run", "--config", s(&cfg), "--seed", "4", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["metrics.csv", "manifest.json", "model.bin", "policy.bin"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let text = fs::read_to_string(out.join("manifest.json")).unwrap();
    let manifest: RunManifest = serde_json::from_str(&text).unwrap();
    assert_eq!(manifest.seed, 4);
    assert_eq!(manifest.artifacts.metrics, "metrics.csv");
    let embedded = serde_json::to_string(&manifest.config).unwrap();
    assert_eq!(parse_config(&embedded, "manifest").unwrap(), manifest.config);

    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(
        lines.next().unwrap(),
        "episode,phase,return_env,success,delta_mean,model_loss,policy_grad_norm,entropy"
    );
    assert_eq!(lines.count(), 120);
    tar2::reward_model::RewardModel::load(&out.join("model.bin")).unwrap();
    tar2::training::PolicyParams::load(&out.join("policy.bin")).unwrap();
}

#[test]
fn identical_runs_give_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&tar2(&["run", "--config", s(&cfg), "--seed", "1", "--out", s(&a)])), 0);
    assert_eq!(code(&tar2(&["run", "--config", s(&cfg), "--seed", "1", "--out", s(&b)])), 0);
    assert_eq!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(b.join("metrics.csv")).unwrap());
}

#[test]
fn bad_config_exits_2_naming_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "{\n  \"version\": 1,\n  \"redistributor\": \"rudder\"\n}");
    let o = tar2(&["run", "--config", s(&cfg), "--out", s(&dir.path().join("x"))]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("redistributor") && err.contains(":3:"), "{err}");

    let o = tar2(&["run", "--config", s(&dir.path().join("missing.json")), "--out", "x"]);
    assert_eq!(code(&o), 2);
    let o = tar2(&["run", "--out", "x"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn runtime_abort_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    // a file where the output directory should go
    let blocker = dir.path().join("blocked");
    fs::write(&blocker, "x").unwrap();
    let o = tar2(&["run", "--config", s(&cfg), "--out", s(&blocker)]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn bad_thread_setting_is_usage_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_tar2"))
        .args(["verify", "--suite", "algebra"])
        .env("TAR2_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn verify_algebra_passes_and_fault_is_pinpointed() {
    let o = tar2(&["verify", "--suite", "algebra", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(report["checks"].as_array().unwrap().len(), 4);

    let o = tar2(&["verify", "--suite", "algebra", "--inject-fault"]);
    assert_eq!(code(&o), 1);
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let failed: Vec<&str> = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["status"] == "fail")
        .map(|c| c["check"].as_str().unwrap())
        .collect();
    assert_eq!(failed, vec!["simplex"]);

    assert_eq!(code(&tar2(&["verify", "--suite", "nonsense"])), 2);
}

#[test]
fn compare_dedupes_and_summarises() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("cmp");
    let o = tar2(&[
        "compare",
        "--config",
        s(&cfg),
        "--arms",
        "oracle,episodic,oracle",
        "--seeds",
        "2",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("duplicate arm 'oracle'"));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "arm,seed,final_success,episodes_to_0_9,status");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("oracle,0,") && lines[4].starts_with("episodic,1,"));
    assert!(out.join("episodic/seed1/metrics.csv").is_file());

    let single = dir.path().join("one");
    let o = tar2(&["compare", "--config", s(&cfg), "--arms", "ircr", "--seeds", "1", "--out", s(&single)]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_to_string(single.join("summary.csv")).unwrap().lines().count(), 2);

    let o = tar2(&["compare", "--config", s(&cfg), "--arms", "oracle,rudder", "--out", s(&single)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn compare_isolates_failing_arm() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("cmp");
    fs::create_dir_all(out.join("tar2")).unwrap();
    // occupy the tar2 run directory with a file so that arm fails
    fs::write(out.join("tar2/seed0"), "x").unwrap();
    let o = tar2(&["compare", "--config", s(&cfg), "--arms", "tar2,oracle", "--seeds", "1", "--out", s(&out)]);
    assert_eq!(code(&o), 3);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.contains("tar2,0,,,failed"), "{summary}");
    assert!(summary.contains("oracle,0,") && summary.contains(",ok"));
}

#[test]
fn plot_bands_determinism_and_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("\"tar2\"", "\"oracle\""));
    let out = dir.path().join("cmp");
    let o = tar2(&["compare", "--config", s(&cfg), "--arms", "oracle", "--seeds", "5", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csvs: Vec<String> = (0..5)
        .map(|k| out.join(format!("oracle/seed{k}/metrics.csv")).to_str().unwrap().to_owned())
        .collect();

    let one = dir.path().join("one.svg");
    assert_eq!(code(&tar2(&["plot", "--metrics", &csvs[0], "--out", s(&one)])), 0);
    let svg = fs::read_to_string(&one).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<polyline") && !svg.contains("<polygon"));

    let mut args = vec!["plot", "--metrics"];
    args.extend(csvs.iter().map(String::as_str));
    let many = dir.path().join("many.svg");
    let many2 = dir.path().join("many2.svg");
    assert_eq!(code(&tar2(&[args.clone(), vec!["--out", s(&many)]].concat())), 0);
    assert_eq!(code(&tar2(&[args, vec!["--out", s(&many2)]].concat())), 0);
    let a = fs::read(&many).unwrap();
    assert_eq!(a, fs::read(&many2).unwrap());
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.matches("<polygon").count(), 1);
    assert_eq!(text.matches("<polyline").count(), 1);
    assert!(text.contains(">oracle<"));

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "episode,return\n0,1.0\n").unwrap();
    let o = tar2(&["plot", "--metrics", &csvs[0], s(&bad), "--out", s(&dir.path().join("x.svg"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}
