use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

fn dyndp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dyndp"))
        .args(args)
        .env_remove("DYNDP_OUT")
        .output()
        .expect("spawn dyndp")
}

fn ok(args: &[&str]) {
    let out = dyndp(args);
    assert!(
        out.status.success(),
        "dyndp {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn plan_outputs_are_byte_identical_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["plan", "--seed", "5", "--compare-rho-mu", "1,2,4", "--out", s(out)]);
    }
    for f in ["plan.json", "schedule.csv", "consumption.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn consumption_curves_end_at_the_budget() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["plan", "--seed", "1", "--eps", "0.8", "--compare-rho-mu", "1,2,4", "--out", s(dir.path())]);
    let rows = read_csv(&dir.path().join("consumption.csv"));
    let mut finals = Vec::new();
    for w in rows.windows(2) {
        if w[0][0] != w[1][0] {
            finals.push(w[0][2].parse::<f64>().unwrap());
        }
    }
    finals.push(rows.last().unwrap()[2].parse().unwrap());
    assert_eq!(finals.len(), 4);
    assert!(finals.iter().all(|e| (e - 0.8).abs() < 1e-6), "{finals:?}");
}

#[test]
fn vanilla_method_emits_flat_schedule() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["plan", "--seed", "1", "--method", "vanilla", "--out", s(dir.path())]);
    let rows = read_csv(&dir.path().join("schedule.csv"));
    assert!(rows.iter().all(|r| r[1..4] == rows[0][1..4]));
}

#[test]
fn audit_matches_golden_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let d = s(dir.path());
    ok(&["plan", "--seed", "3", "--steps", "300", "--sampling-rate", "0.05", "--eps", "1", "--delta", "1e-5", "--out", d]);
    ok(&["audit", "--plan", &format!("{d}/plan.json"), "--out", d]);
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden_sandwich.csv");
    assert_eq!(
        fs::read_to_string(dir.path().join("sandwich.csv")).unwrap(),
        fs::read_to_string(golden).unwrap()
    );
}

#[test]
fn flat_plan_audit_is_sandwiched() {
    let dir = tempfile::tempdir().unwrap();
    let d = s(dir.path());
    ok(&["plan", "--seed", "1", "--method", "vanilla", "--out", d]);
    ok(&["audit", "--plan", &format!("{d}/plan.json"), "--out", d]);
    for r in read_csv(&dir.path().join("sandwich.csv")) {
        let step: usize = r[0].parse().unwrap();
        let (clt, rdp): (f64, f64) = (r[1].parse().unwrap(), r[2].parse().unwrap());
        if step >= 200 {
            assert!(rdp >= clt, "step {step}");
        }
    }
}

#[test]
fn empty_plan_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("empty.json");
    fs::write(&p, "{}").unwrap();
    assert!(!dyndp(&["audit", "--plan", s(&p), "--out", s(dir.path())]).status.success());
    let plan = r#"{"hyper":{"steps":0,"sampling_rate":0.1,"rho_mu":1.0,"rho_c":1.0,"c0":1.0},
        "mu0":0.1,"mu_t":[],"C_t":[],"sigma_t":[],"budget":{"eps":1.0,"delta":1e-5},"mu_tot":0.3}"#;
    fs::write(&p, plan).unwrap();
    let out = dyndp(&["audit", "--plan", s(&p), "--out", s(dir.path())]);
    assert!(!out.status.success());
    assert!(!dir.path().join("sandwich.csv").exists());
}

#[test]
fn train_is_reproducible_and_within_budget() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let cfg = configs().join("synthetic.json");
    let start = Instant::now();
    ok(&["train", "--config", s(&cfg), "--out", s(&a)]);
    assert!(start.elapsed().as_secs() < 60);
    ok(&["train", "--config", s(&cfg), "--out", s(&b)]);
    for f in ["history.csv", "theory.json", "summary.json", "plan.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let header = fs::read_to_string(a.join("history.csv")).unwrap();
    assert!(header.starts_with("step,loss,acc,clip_fraction,avg_coord_grad_norm,C_t,sigma_t,mu_t,cum_eps\n"));
}

#[test]
fn optimizers_share_schedule_columns() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("sgd"), dir.path().join("adam"));
    let cfg = configs().join("synthetic.json");
    ok(&["train", "--config", s(&cfg), "--steps", "200", "--optimizer", "sgd", "--out", s(&a)]);
    ok(&["train", "--config", s(&cfg), "--steps", "200", "--optimizer", "adam", "--out", s(&b)]);
    let (ra, rb) = (read_csv(&a.join("history.csv")), read_csv(&b.join("history.csv")));
    assert_eq!(ra.len(), 200);
    for (x, y) in ra.iter().zip(&rb) {
        assert_eq!(x[5..], y[5..]);
    }
    assert_ne!(ra, rb);
}

#[test]
fn fedtrain_runs_and_requires_federated_section() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["fedtrain", "--config", s(&configs().join("federated.json")), "--out", s(dir.path())]);
    assert_eq!(read_csv(&dir.path().join("history.csv")).len(), 300);
    let out = dyndp(&["fedtrain", "--config", s(&configs().join("synthetic.json")), "--out", s(dir.path())]);
    assert!(!out.status.success());
}

#[test]
fn sweep_smoke() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["sweep", "--seed", "2", "--steps", "200", "--inv-rho", "0.5,0.25", "--out", s(dir.path())]);
    let rows = read_csv(&dir.path().join("sweep.csv"));
    assert_eq!(rows.len(), 3);
    assert_eq!((rows[0][0].as_str(), rows[1][0].as_str(), rows[2][0].as_str()), ("1", "2", "4"));
    for r in rows {
        assert!((r[4].parse::<f64>().unwrap() - 0.5).abs() < 1e-6);
    }
}

#[test]
fn seed_is_mandatory_and_bad_configs_fail() {
    assert!(!dyndp(&["train"]).status.success());
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    fs::write(&p, r#"{"budget":{"eps":1.0}}"#).unwrap();
    assert!(!dyndp(&["plan", "--config", s(&p)]).status.success());
    assert!(!dyndp(&["plan", "--seed", "1", "--eps", "-1", "--out", s(dir.path())]).status.success());
}

#[test]
fn env_var_sets_default_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_dyndp"))
        .args(["plan", "--seed", "1", "--steps", "100"])
        .env("DYNDP_OUT", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("plan.json").exists());
}

#[test]
fn shipped_configs_parse() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["synthetic.json", "federated.json", "mnist.json"] {
        ok(&["plan", "--config", s(&configs().join(name)), "--out", s(&dir.path().join(name))]);
    }
}
