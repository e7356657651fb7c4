use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fscd-sim"));
    c.env_remove("FSCD_SIM_SEED");
    c
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn simulate_is_reproducible() {
    let fig5 = scenario("paper_fig5.scenario");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        let o = run(&["simulate", "--scenario", fig5.to_str().unwrap(), "--out", dir.to_str().unwrap(), "--seed", "11"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (ta, tb) = (read_tree(a.path()), read_tree(b.path()));
    assert!(ta.iter().any(|(p, _)| p == "report.json"));
    assert!(ta.iter().any(|(p, _)| p.ends_with("latency.csv")));
    assert_eq!(ta, tb);
}

#[test]
fn sequential_flag_gives_identical_output() {
    let fig5 = scenario("paper_fig5.scenario");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let s = fig5.to_str().unwrap();
    assert!(run(&["simulate", "--scenario", s, "--out", a.path().to_str().unwrap()]).status.success());
    assert!(run(&["--sequential", "simulate", "--scenario", s, "--out", b.path().to_str().unwrap()]).status.success());
    assert_eq!(read_tree(a.path()), read_tree(b.path()));
}

#[test]
fn seed_flag_beats_environment() {
    let fig5 = scenario("paper_fig5.scenario");
    let s = fig5.to_str().unwrap();
    let trace = |env: Option<&str>, seed: Option<&str>| {
        let mut c = bin();
        c.args(["otdr-trace", "--scenario", s, "--pulse-index", "0"]);
        if let Some(seed) = seed {
            c.args(["--seed", seed]);
        }
        if let Some(v) = env {
            c.env("FSCD_SIM_SEED", v);
        }
        let o = c.output().unwrap();
        assert!(o.status.success());
        stdout(&o)
    };
    let env3 = trace(Some("3"), None);
    assert_eq!(env3, trace(None, Some("3")));
    assert_eq!(trace(Some("4"), Some("3")), env3);
    assert_ne!(env3, trace(None, Some("4")));
}

#[test]
fn latency_report_lists_three_layers() {
    let o = run(&["latency-report", "--scenario", scenario("paper_fig1.scenario").to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "layer,trigger_ps,completed_ps,response_ps");
    let layers: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(layers, ["agent", "src", "msm"]);
}

#[test]
fn sop_trace_prints_csv() {
    let o = run(&["sop-trace", "--scenario", scenario("paper_fig1.scenario").to_str().unwrap(), "--path", "path1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 401);
}

#[test]
fn errors_exit_nonzero_with_a_message() {
    let fig5 = scenario("paper_fig5.scenario");
    let s = fig5.to_str().unwrap();
    let cases: [&[&str]; 5] = [
        &["simulate", "--out", "/tmp/x"],
        &["otdr-trace", "--scenario", s, "--pulse-index", "99"],
        &["sop-trace", "--scenario", s, "--path", "nope"],
        &["latency-report", "--scenario", "/nonexistent.scenario"],
        &["simulate", "--scenario", s, "--out", "/tmp/x", "--seed", "minus-one"],
    ];
    for args in cases {
        let o = run(args);
        assert!(!o.status.success(), "{args:?} succeeded");
        assert!(!o.stderr.is_empty(), "{args:?} printed no message");
    }
}

#[test]
fn invalid_scenario_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(scenario("paper_fig5.scenario")).unwrap();
    let bad = text.replacen("\"length_m\": 12800.0", "\"length_m\": -5.0", 1);
    assert_ne!(bad, text);
    let p = dir.path().join("bad.scenario");
    fs::write(&p, bad).unwrap();
    let o = run(&["latency-report", "--scenario", p.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("fibres[0].segments[0].length_m"), "{err}");
}
