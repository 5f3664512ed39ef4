use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ergogame::domain::Domain;
use ergogame::model::{build_birth_death, save_model, BirthDeathParams};
use ergogame::strategy::{Player, StationaryStrategy};
use serde_json::{json, Value};

const BIN: &str = env!("CARGO_BIN_EXE_ergogame");

/// Small ladder with a loose convergence tolerance so debug builds stay fast.
const SMALL: [&str; 4] = ["--radii", "10,20,40", "--tol-ladder", "0.1"];

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("ERGOGAME_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn solve_small(out: &Path) -> Output {
    let mut args = vec!["solve", "--out", out.to_str().unwrap()];
    args.extend(SMALL);
    run(&args)
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn solve_writes_artifacts_and_verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = solve_small(dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["rho_ladder.csv", "psi.json", "selectors.json", "resolved_config.toml", "run_meta.json"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let csv = fs::read_to_string(dir.path().join("rho_ladder.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("n,radius,rho_n,residual,theta_n,touch_state"));
    assert_eq!(lines.count(), 3);
    let psi = read_json(&dir.path().join("psi.json"));
    assert_eq!(psi["psi"]["0"].as_f64(), Some(1.0));

    let mut args = vec!["verify", "--out", out];
    args.extend(SMALL);
    let v = run(&args);
    assert_eq!(code(&v), 0, "{}\n{}", stdout(&v), String::from_utf8_lossy(&v.stderr));
    let report = read_json(&dir.path().join("verify_report.json"));
    assert_eq!(report["passed"], json!(true));
    assert!(report["minimax"]["max_interchange_gap"].as_f64().unwrap() < 1e-9);
    assert!(report["deviations"]["tested"].as_u64().unwrap() > 0);
    assert!(dir.path().join("deviations.csv").exists());
}

#[test]
fn corrupted_selectors_fail_verification() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&solve_small(dir.path())), 0);
    let path = dir.path().join("selectors.json");
    let mut sel = read_json(&path);
    // player 1 moves all mass to its least likely action on a few states
    for i in 1..=5 {
        let m = sel["pi1"][i.to_string()].as_object_mut().unwrap();
        let worst = m
            .iter()
            .min_by(|a, b| a.1.as_f64().unwrap().total_cmp(&b.1.as_f64().unwrap()))
            .map(|(k, _)| k.clone())
            .unwrap();
        for (k, v) in m.iter_mut() {
            *v = json!(if *k == worst { 1.0 } else { 0.0 });
        }
    }
    fs::write(&path, serde_json::to_string_pretty(&sel).unwrap()).unwrap();

    let mut args = vec!["verify", "--out", dir.path().to_str().unwrap()];
    args.extend(SMALL);
    let v = run(&args);
    assert_eq!(code(&v), 3, "{}", stdout(&v));
    let report = read_json(&dir.path().join("verify_report.json"));
    assert_eq!(report["passed"], json!(false));
    assert!(!report["deviations"]["violations"].as_array().unwrap().is_empty());
    assert!(stdout(&v).contains("player 1"));
}

#[test]
fn single_level_ladder_exits_with_trace() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["solve", "--radii", "10", "--tol-eigen", "1e-12", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stdout(&o).contains("rho_n"));
    assert!(dir.path().join("rho_ladder.csv").exists());
    assert!(!dir.path().join("psi.json").exists());
}

#[test]
fn malformed_model_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.json");
    fs::write(&model, "{ \"states\": ").unwrap();
    let o = run(&["solve", "--model", model.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn verify_without_artifacts_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn simulate_requires_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&solve_small(dir.path())), 0);
    let o = run(&["simulate", "--out", dir.path().to_str().unwrap(), "--radii", "10,20,40"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
}

#[test]
fn constant_cost_is_estimated_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let c0 = 0.75;
    let (m, _) = build_birth_death(&BirthDeathParams::with_cap(15)).unwrap();
    let m = m.map_cost(|_, _, _, _| c0);
    let model = dir.path().join("const.json");
    save_model(&m, None, &model).unwrap();

    let d = Domain::range(0, 14);
    let labeled = |p: Player| -> BTreeMap<usize, BTreeMap<String, f64>> {
        StationaryStrategy::uniform(&m, p, &d).to_labeled(&m, p)
    };
    let sel = json!({
        "pi1": labeled(Player::One),
        "pi2": labeled(Player::Two),
        "values": {},
        "max_duality_gap": 0.0,
    });
    let strategies = dir.path().join("uniform.json");
    fs::write(&strategies, sel.to_string()).unwrap();

    let o = run(&[
        "simulate",
        "--model",
        model.to_str().unwrap(),
        "--strategies",
        strategies.to_str().unwrap(),
        "--seed",
        "3",
        "--paths",
        "500",
        "--horizon",
        "5",
        "--trajectories",
        "2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let est = read_json(&dir.path().join("estimate.json"));
    assert_eq!(est["estimate"]["j_hat"].as_f64(), Some(c0));
    assert_eq!(est["estimate"]["bootstrap_se"].as_f64(), Some(0.0));
    assert_eq!(est["z"].as_f64(), Some(0.0), "{}", est["rho_error"]);
    assert!(stdout(&o).contains("J_hat = 7.5000000000000000e-1"));
    let tr = fs::read_to_string(dir.path().join("trajectory_1.csv")).unwrap();
    assert!(tr.starts_with("t,state,a_label,b_label,cost_rate"));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "[ladder]\nradii = [10, 20]\ndelta = 0.5\n\n[tolerances]\ndeviation = 1e-5\n",
    )
    .unwrap();
    let o = run(&[
        "model",
        "check",
        "--config",
        cfg.to_str().unwrap(),
        "--delta",
        "2.0",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let resolved: toml::Table = fs::read_to_string(dir.path().join("resolved_config.toml"))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(resolved["ladder"]["delta"].as_float(), Some(2.0));
    assert_eq!(resolved["tolerances"]["deviation"].as_float(), Some(1e-5));
    // the built-in store follows the largest level
    assert_eq!(resolved["model"]["params"]["cap"].as_integer(), Some(21));
    assert!(dir.path().join("model_check.json").exists());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[ladder]\nradius = [10]\n").unwrap();
    let o = run(&["solve", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn bad_thread_env_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(BIN)
        .args(["model", "check", "--out", dir.path().to_str().unwrap()])
        .env("ERGOGAME_THREADS", "lots")
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
    let o = Command::new(BIN)
        .args(["model", "check", "--threads", "2", "--out", dir.path().to_str().unwrap()])
        .env("ERGOGAME_THREADS", "lots")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "the flag takes precedence over the environment");
    let meta = read_json(&dir.path().join("run_meta.json"));
    assert_eq!(meta["threads"].as_u64(), Some(2));
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        assert_eq!(code(&solve_small(d)), 0);
        let o = run(&[
            "simulate", "--radii", "10,20,40", "--seed", "11", "--paths", "2000", "--horizon", "5", "--out",
            d.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0);
    }
    for f in ["psi.json", "selectors.json", "estimate.json", "rho_ladder.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}
