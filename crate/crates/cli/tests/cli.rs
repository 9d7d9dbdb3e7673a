use std::path::Path;
use std::process::{Command, Output};

use rmdp::TabularMdp;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_robustmdp"))
}

fn run_ok(args: &[&str], dir: &Path) -> Output {
    let out = bin().args(args).current_dir(dir).output().unwrap();
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn garnet_gen_writes_valid_mdp() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(
        &[
            "garnet-gen", "--states", "5", "--actions", "3", "--radius", "0.2", "--seed", "11",
            "--output", "m.json",
        ],
        dir.path(),
    );
    let mdp = TabularMdp::load(&dir.path().join("m.json")).unwrap();
    assert_eq!(mdp.num_states, 5);
    assert_eq!(mdp.num_actions, 3);
    assert_eq!(mdp.radius, 0.2);
    mdp.validate().unwrap();
}

#[test]
fn constants_prints_expected_c_pl() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_ok(
        &["constants", "--states", "10", "--actions", "2", "--gamma", "0.9", "--mu-min", "0.1"],
        dir.path(),
    );
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let c_pl = v["c_pl"].as_f64().unwrap();
    assert!((c_pl - 100.0).abs() / 100.0 < 1e-9);
}

#[test]
fn evaluate_exact_single_state() {
    let dir = tempfile::tempdir().unwrap();
    let mdp = TabularMdp::new(0.9, 0.1, vec![vec![0.5]], vec![vec![vec![1.0]]]).unwrap();
    mdp.save(&dir.path().join("m.json")).unwrap();
    let out = run_ok(&["evaluate", "--mdp", "m.json"], dir.path());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["mean"].as_f64().unwrap() - 5.0).abs() < 1e-8);
}

#[test]
fn evaluate_td_matches_exact_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(
        &[
            "garnet-gen", "--states", "4", "--actions", "2", "--radius", "0.15", "--seed", "3",
            "--output", "m.json",
        ],
        dir.path(),
    );
    let exact = {
        let out = run_ok(&["evaluate", "--mdp", "m.json"], dir.path());
        serde_json::from_slice::<serde_json::Value>(&out.stdout).unwrap()["mean"]
            .as_f64()
            .unwrap()
    };
    let td_args = [
        "evaluate", "--mdp", "m.json", "--method", "td", "--samples", "200000", "--repeats",
        "3", "--seed", "1",
    ];
    let a = run_ok(&td_args, dir.path());
    let b = run_ok(&td_args, dir.path());
    assert_eq!(a.stdout, b.stdout);
    let mean = serde_json::from_slice::<serde_json::Value>(&a.stdout).unwrap()["mean"]
        .as_f64()
        .unwrap();
    assert!((mean - exact).abs() <= 0.05, "td {mean} vs exact {exact}");
}

#[test]
fn train_rpg_csv_shape_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "train", "--mode", "rpg", "--garnet", "6", "3", "-R", "0.15", "-T", "20", "--trials",
        "3", "--seed", "7", "--output", "out.csv",
    ];
    run_ok(&args, dir.path());
    let csv = std::fs::read_to_string(dir.path().join("out.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("trial,iteration,metric,value"));
    // 3 trials x 21 iterations x 4 metrics.
    assert_eq!(csv.lines().count(), 1 + 3 * 21 * 4);
    assert!(!csv.contains('\r'));
    let summary = std::fs::read_to_string(dir.path().join("out.summary.csv")).unwrap();
    assert!(summary.starts_with("iteration,metric,p05,p50,p95\n"));

    let first = std::fs::read(dir.path().join("out.csv")).unwrap();
    run_ok(&args, dir.path());
    assert_eq!(first, std::fs::read(dir.path().join("out.csv")).unwrap());
}

#[test]
fn rpg_at_zero_radius_equals_nominal_pg() {
    let dir = tempfile::tempdir().unwrap();
    let common = [
        "--garnet", "6", "3", "-R", "0", "-T", "25", "--trials", "2", "--seed", "9",
    ];
    let mut a = vec!["train", "--mode", "rpg"];
    a.extend_from_slice(&common);
    a.extend_from_slice(&["--output", "a.csv"]);
    run_ok(&a, dir.path());
    let mut b = vec!["train", "--mode", "nominal-pg"];
    b.extend_from_slice(&common);
    b.extend_from_slice(&["--output", "b.csv"]);
    run_ok(&b, dir.path());
    assert_eq!(
        std::fs::read(dir.path().join("a.csv")).unwrap(),
        std::fs::read(dir.path().join("b.csv")).unwrap()
    );
}

#[test]
fn train_smoothed_ac_emits_j_sigma() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(
        &[
            "train", "--mode", "smoothed-ac", "--garnet", "4", "2", "-R", "0.15", "--sigma",
            "10", "-T", "10", "--trials", "1", "--seed", "2", "--critic-steps", "300",
            "--rollouts", "8", "--output", "out.csv",
        ],
        dir.path(),
    );
    let csv = std::fs::read_to_string(dir.path().join("out.csv")).unwrap();
    assert!(csv.lines().any(|l| l.contains(",j_sigma,")));
    assert!(csv.lines().any(|l| l.contains(",worst_case_reward,")));
}

#[test]
fn train_requires_an_environment() {
    let out = bin()
        .args(["train", "--mode", "rpg", "--output", "x.csv"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn verify_small_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_ok(&["verify", "--small-suite"], dir.path());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().filter(|l| l.ends_with(": PASS")).count() >= 8);
    assert!(!text.contains("FAIL"));
}
