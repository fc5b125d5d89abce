use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixture(name: &str) -> PathBuf {
    repo().join("fixtures").join(name)
}

fn covwatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_covwatch"))
        .args(args)
        .env_remove("COVWATCH_CRITVAL_CACHE")
        .output()
        .expect("run covwatch")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn critval_rejects_alpha_outside_unit_interval() {
    let o = covwatch(&["critval", "--alpha", "1.5", "--gamma", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn critval_second_run_hits_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache.json");
    let args = ["critval", "--alpha", "0.05", "--gamma", "0.25", "--paths", "5000", "--seed", "3", "--cache", path(&cache)];
    let first = covwatch(&args);
    assert!(first.status.success());
    let stamp = std::fs::metadata(&cache).unwrap().modified().unwrap();
    let second = covwatch(&args);
    assert_eq!(stdout(&first), stdout(&second));
    assert_eq!(std::fs::metadata(&cache).unwrap().modified().unwrap(), stamp);

    let via_env = Command::new(env!("CARGO_BIN_EXE_covwatch"))
        .args(&args[..args.len() - 2])
        .env("COVWATCH_CRITVAL_CACHE", &cache)
        .output()
        .unwrap();
    assert_eq!(stdout(&via_env), stdout(&first));
}

#[test]
fn monitor_detects_variance_jump_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("traj.csv");
    let o = covwatch(&[
        "monitor",
        "--history",
        path(&fixture("monitor_h1_history.csv")),
        "--stream",
        path(&fixture("monitor_h1_stream.csv")),
        "--k1",
        "60",
        "--c-alpha",
        "1.330488606381368",
        "--out",
        path(&traj),
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.starts_with("DETECTED at k="), "{text}");
    let k: usize = text.trim()["DETECTED at k=".len()..].parse().unwrap();
    assert!(k > 150 && k <= 240);

    let csv = std::fs::read_to_string(&traj).unwrap();
    let last = csv.lines().last().unwrap();
    assert!(last.starts_with(&format!("{k},")));
    assert!(last.ends_with(",1"));
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert!(rows[..rows.len() - 1].iter().all(|l| l.ends_with(",0")));
}

#[test]
fn monitor_quiet_on_null_fixture_from_stdin() {
    let stream = std::fs::File::open(fixture("monitor_h0_stream.csv")).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_covwatch"))
        .args(["monitor", "--k1", "60", "--c-alpha", "1.330488606381368", "--history"])
        .arg(fixture("monitor_h0_history.csv"))
        .stdin(stream)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "no detection");
}

#[test]
fn monitor_requires_k1() {
    let o = covwatch(&["monitor", "--history", path(&fixture("monitor_h0_history.csv"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn singular_baseline_is_a_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    let hist = dir.path().join("hist.csv");
    let rows: String = (0..12).map(|i| format!("{i},{i},0\n")).collect();
    std::fs::write(&hist, rows).unwrap();
    let stream = dir.path().join("stream.csv");
    std::fs::write(&stream, "1,2,3\n").unwrap();
    let o = covwatch(&[
        "monitor",
        "--history",
        path(&hist),
        "--stream",
        path(&stream),
        "--k1",
        "6",
        "--nu4",
        "3",
        "--c-alpha",
        "1.33",
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn simulate_rejects_zero_reps() {
    let o = covwatch(&["simulate", "--config", path(&repo().join("configs/demo.json")), "--reps", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_is_thread_count_independent() {
    let dir = tempfile::tempdir().unwrap();
    let config = repo().join("configs/demo.json");
    let run = |threads: &str, name: &str| {
        let out = dir.path().join(name);
        let o = covwatch(&["simulate", "--config", path(&config), "--threads", threads, "--seed", "5", "--out", path(&out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(out).unwrap()
    };
    let one = run("1", "a.json");
    assert_eq!(one, run("8", "b.json"));
    let report: serde_json::Value = serde_json::from_slice(&one).unwrap();
    assert_eq!(report["cells"].as_array().unwrap().len(), 4);
}

#[test]
fn analyze_rejects_oversized_universe() {
    let o = covwatch(&["analyze", "--prices", path(&fixture("prices_planted.csv")), "--top", "50", "--c-alpha", "1.33"]);
    assert_eq!(o.status.code(), Some(2));
}

fn detect_order(extra: &[&str]) -> serde_json::Value {
    let mut args = vec!["detect-check", "--c1", "0.5", "--c2", "0.5", "--kstar", "400", "--n", "300"];
    args.extend_from_slice(extra);
    let o = covwatch(&args);
    assert!(o.status.success());
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn detect_check_regimes() {
    let r = detect_order(&["--tau1", "1", "--tau2", "1.5", "--f", "linear"]);
    assert_eq!(r["predicted_order"], "undetectable by this f");
    let r = detect_order(&["--tau1", "1", "--tau2", "1.5", "--f", "square"]);
    assert_eq!(r["predicted_order"], "sqrt(n)");
    assert_eq!(r["regime"], "late");
    let r = detect_order(&["--tau1", "1", "--tau2", "1"]);
    assert_eq!(r["predicted_order"], "undetectable");

    let o = covwatch(&["detect-check", "--c1", "1.2", "--c2", "0.5", "--tau1", "1", "--tau2", "1", "--kstar", "1", "--n", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn help_lists_every_flag() {
    let top = stdout(&covwatch(&["--help"]));
    for sub in ["critval", "monitor", "simulate", "analyze", "detect-check"] {
        assert!(top.contains(sub));
    }
    let cases: [(&str, &[&str]); 5] = [
        ("critval", &["--alpha", "--gamma", "--paths", "--seed", "--cache", "--out"]),
        (
            "monitor",
            &["--history", "--stream", "--k1", "--f", "--weight", "--gamma", "--alpha", "--critval-cache", "--out"],
        ),
        ("simulate", &["--config", "--reps", "--seed", "--threads", "--out"]),
        (
            "analyze",
            &["--prices", "--top", "--k1", "--k2", "--f", "--weight", "--alpha", "--winsor-sd", "--out"],
        ),
        ("detect-check", &["--c1", "--c2", "--tau1", "--tau2", "--f", "--kstar", "--n"]),
    ];
    for (sub, flags) in cases {
        let help = stdout(&covwatch(&[sub, "--help"]));
        for flag in flags {
            assert!(help.contains(flag), "{sub} --help lacks {flag}");
        }
    }
}
