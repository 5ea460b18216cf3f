//! End-to-end runs of the `eap` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &[&str] = &[
    "train.budget_steps=6000",
    "train.pretrain_max_steps=2048",
    "ppo.rollout_steps=512",
    "ppo.epochs=2",
    "error_fn.samples_per_refresh=32",
    "error_fn.train_steps=5",
];

fn eap(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eap"))
        .args(args)
        .env("EAP_OUTPUT_ROOT", root)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn train(root: &Path, method: &str, extra: &[&str]) -> String {
    let mut args = vec!["train".to_string()];
    for s in SMALL.iter().map(|s| s.to_string()).chain([format!("method=\"{method}\""), "seed=1".into()]) {
        args.push("--set".into());
        args.push(s);
    }
    args.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(&eap(&refs, root)).trim().to_string()
}

#[test]
fn train_writes_a_complete_run_directory() {
    let tmp = TempDir::new().unwrap();
    let dir = train(tmp.path(), "eap", &[]);
    let dir = Path::new(&dir);
    assert!(dir.starts_with(tmp.path()));
    assert!(dir.ends_with("cartpole-eap-s1"));
    for f in ["config.toml", "population.txt", "metrics.csv", "summary.json", "learning_curve.svg"] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    let checkpoints = fs::read_dir(dir.join("checkpoints")).unwrap().count();
    assert!(checkpoints >= 1);
    let metrics = fs::read_to_string(dir.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("update,phase,method,"));
    assert!(metrics.lines().count() > 2);
}

#[test]
fn configuration_errors_exit_with_code_two() {
    let tmp = TempDir::new().unwrap();
    let out = eap(&["train", "--set", "ppo.no_such_key=1"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ppo.no_such_key"));
    let out = eap(&["eval", tmp.path().join("missing").to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let out = eap(&["train", "--set", "error_fn.T=0"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_is_repeatable_and_flags_foreign_populations() {
    let tmp = TempDir::new().unwrap();
    let dir = train(tmp.path(), "up", &[]);
    let report = Path::new(&dir).join("eval/report.csv");
    let stdout = ok(&eap(&["eval", &dir, "--set", "eval.episodes=2"], tmp.path()));
    assert!(stdout.contains("held-out normalized return"));
    assert!(stdout.contains("oracle-nu diagnostic"));
    let first = fs::read_to_string(&report).unwrap();
    ok(&eap(&["eval", &dir, "--set", "eval.episodes=2"], tmp.path()));
    assert_eq!(first, fs::read_to_string(&report).unwrap());
    assert!(!first.starts_with("# WARNING"));
    for f in ["report.json", "report.svg"] {
        assert!(Path::new(&dir).join("eval").join(f).is_file());
    }

    let foreign = tmp.path().join("foreign.txt");
    let text = ok(&eap(&["inspect-population", "--set", "env.population_seed=99"], tmp.path()));
    assert!(text.contains("heldout"));
    let other = train(tmp.path(), "dr", &["--set", "env.population_seed=99", "--set", "name=\"other\""]);
    fs::copy(Path::new(&other).join("population.txt"), &foreign).unwrap();
    let stdout = ok(&eap(&["eval", &dir, "--population", foreign.to_str().unwrap(), "--set", "eval.episodes=2"], tmp.path()));
    assert!(stdout.contains("WARNING"));
    assert!(fs::read_to_string(&report).unwrap().starts_with("# WARNING"));
}

#[test]
fn compare_reports_budget_and_improvements() {
    let tmp = TempDir::new().unwrap();
    let a = train(tmp.path(), "eap", &[]);
    let b = train(tmp.path(), "dr", &[]);
    for d in [&a, &b] {
        ok(&eap(&["eval", d, "--set", "eval.episodes=2"], tmp.path()));
    }
    let out = tmp.path().join("cmp");
    let stdout = ok(&eap(&["compare", "--out", out.to_str().unwrap(), &a, &b], tmp.path()));
    assert!(stdout.contains("eap over dr"));
    assert!(stdout.contains("error steps included: true"));
    for f in ["comparison.json", "comparison.csv", "comparison.svg", "learning_curves.svg"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
}

#[test]
fn resume_finishes_a_run() {
    let tmp = TempDir::new().unwrap();
    let dir = train(tmp.path(), "dr", &[]);
    let before = fs::read_to_string(Path::new(&dir).join("metrics.csv")).unwrap();
    ok(&eap(&["train", "--resume", &dir], tmp.path()));
    assert_eq!(before, fs::read_to_string(Path::new(&dir).join("metrics.csv")).unwrap());
}

#[test]
fn ablation_specs_are_validated_and_run() {
    let tmp = TempDir::new().unwrap();
    let empty = tmp.path().join("empty.toml");
    fs::write(&empty, "axis = \"horizon_T\"\nvalues = []\nseeds = [0]\n").unwrap();
    let out = eap(&["ablate", empty.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(2));

    let spec = tmp.path().join("spec.toml");
    let sets: Vec<String> = SMALL.iter().map(|s| format!("{s:?}")).collect();
    fs::write(
        &spec,
        format!("axis = \"horizon_T\"\nvalues = [1, 3]\nseeds = [0]\nset = [{}]\n", sets.join(", ")),
    )
    .unwrap();
    let stdout = ok(&eap(&["ablate", spec.to_str().unwrap()], tmp.path()));
    let dir = tmp.path().join("ablation-horizon_T");
    assert!(stdout.contains(dir.to_str().unwrap()));
    for f in ["ablation.json", "ablation.csv", "ablation.svg"] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    assert!(dir.join("horizon_T-1-s0/eval/report.json").is_file());
}
