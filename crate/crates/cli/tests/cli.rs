use std::path::Path;
use std::process::{Command, Output};

fn bladdersense(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bladdersense")).args(args).current_dir(cwd).output().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn simulate_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for run in ["a", "b"] {
        let out = bladdersense(&["simulate", "--test", "1", "--seed", "7", "--out", run], dir.path());
        assert!(out.status.success(), "{}", stderr(&out));
    }
    for file in ["test1.csv", "test1.json", "manifest.json"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs");
    }
}

#[test]
fn manifest_alone_regenerates_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let first = bladdersense(&["simulate", "--trajectory", "grid-x", "--seed", "3", "--set", "sim.gain=18", "--out", "a"], dir.path());
    assert!(first.status.success(), "{}", stderr(&first));
    let again = bladdersense(&["simulate", "--trajectory", "grid-x", "--config", "a/manifest.json", "--out", "b"], dir.path());
    assert!(again.status.success(), "{}", stderr(&again));
    for file in ["grid-x.csv", "grid-x.json", "manifest.json"] {
        assert_eq!(std::fs::read(dir.path().join("a").join(file)).unwrap(), std::fs::read(dir.path().join("b").join(file)).unwrap(), "{file}");
    }
}

#[test]
fn different_seeds_give_different_data() {
    let dir = tempfile::tempdir().unwrap();
    for (seed, run) in [("1", "a"), ("2", "b")] {
        assert!(bladdersense(&["simulate", "--test", "2", "--seed", seed, "--out", run], dir.path()).status.success());
    }
    assert_ne!(std::fs::read(dir.path().join("a/test2.csv")).unwrap(), std::fs::read(dir.path().join("b/test2.csv")).unwrap());
}

#[test]
fn missing_config_fails_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = bladdersense(&["simulate", "--test", "1", "--config", "no/such/config.json"], dir.path());
    assert!(!out.status.success());
    assert!(stderr(&out).contains("no/such/config.json"), "{}", stderr(&out));
}

#[test]
fn validate_config_accepts_shipped_default() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/default.json");
    let out = bladdersense(&["validate-config", cfg.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok"));
}

#[test]
fn validate_config_reports_field_paths() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{"sim": {"gain": 0}, "trajectories": {}}"#).unwrap();
    let out = bladdersense(&["validate-config", "bad.json"], dir.path());
    assert!(!out.status.success());
    assert!(stderr(&out).contains("sim.gain"), "{}", stderr(&out));

    let out = bladdersense(&["validate-config", "--set", "sim.ir_model.lo=4200", "--set", "sim.ir_model.hi=4100"], dir.path());
    assert!(!out.status.success());
    assert!(stderr(&out).contains("sim.ir_model"), "{}", stderr(&out));

    let out = bladdersense(&["validate-config", "missing.json"], dir.path());
    assert!(!out.status.success());
    assert!(stderr(&out).contains("missing.json"));
}

#[test]
fn error_kinds_have_distinct_messages_and_codes() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = bladdersense(&["frobnicate"], dir.path());
    let bad_ref = bladdersense(&["simulate", "--trajectory", "nowhere"], dir.path());
    let bad_model = bladdersense(&["evaluate", "--model", "absent.json"], dir.path());
    std::fs::write(dir.path().join("blocker"), "").unwrap();
    let io = bladdersense(&["simulate", "--test", "1", "--out", "blocker/sub"], dir.path());
    let outs = [&unknown, &bad_ref, &bad_model, &io];
    for o in outs {
        assert!(!o.status.success());
        assert!(!stderr(o).is_empty());
    }
    assert!(stderr(&bad_ref).contains("nowhere"), "{}", stderr(&bad_ref));
    assert!(stderr(&bad_model).contains("absent.json"));
    assert!(stderr(&io).contains("blocker"));
    let codes: Vec<_> = [&unknown, &bad_ref, &io].iter().map(|o| o.status.code()).collect();
    assert!(codes[0] != codes[1] && codes[1] != codes[2], "{codes:?}");
}

#[test]
fn evaluate_rangefinder_method_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = bladdersense(&["evaluate", "--method", "complement", "--test", "1", "--out", "ev"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("ev/ir_report.csv")).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("1,complement,"));
}
