use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use psdfact::io::{read_factors, Summary};
use tempfile::TempDir;

fn psdfact(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psdfact"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = psdfact(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn planted(dir: &Path, m: usize, n: usize) -> (String, String) {
    let data = dir.join("x.txt");
    let truth = dir.join("truth.txt");
    ok(&[
        "generate",
        "--kind",
        "planted",
        "--m",
        &m.to_string(),
        "--n",
        &n.to_string(),
        "--r",
        "2",
        "--seed",
        "4",
        "--out",
        p(&data),
        "--truth",
        p(&truth),
    ]);
    (p(&data).to_owned(), p(&truth).to_owned())
}

#[test]
fn planted_six_by_six_is_recovered() {
    let tmp = TempDir::new().unwrap();
    let (data, _) = planted(tmp.path(), 6, 6);
    let out = tmp.path().join("run");
    ok(&[
        "factorize",
        "--input",
        &data,
        "--r",
        "2",
        "--sweeps",
        "2000",
        "--restarts",
        "5",
        "--out",
        p(&out),
    ]);
    let summary = Summary::parse(&fs::read_to_string(out.join("summary.txt")).unwrap()).unwrap();
    assert!(summary.err <= 1e-3, "err {}", summary.err);
    assert_eq!(summary.sweeps, 2000);
    assert_eq!(summary.restarts, 5);
    let history = fs::read_to_string(out.join("history.csv")).unwrap();
    assert!(history.starts_with("sweep,objective,err,kkt_a,kkt_b\n"));
    assert_eq!(history.lines().count(), 2002);
    let fp = read_factors(&out.join("factors.txt")).unwrap();
    assert_eq!((fp.m(), fp.n(), fp.r), (6, 6, 2));
}

#[test]
fn diagonal_blocks_give_diagonal_factors() {
    let tmp = TempDir::new().unwrap();
    let (data, _) = planted(tmp.path(), 5, 4);
    let out = tmp.path().join("run");
    ok(&[
        "factorize",
        "--input",
        &data,
        "--r",
        "2",
        "--blocks",
        "1,1",
        "--sweeps",
        "50",
        "--out",
        p(&out),
    ]);
    let fp = read_factors(&out.join("factors.txt")).unwrap();
    assert!(fp.a.iter().chain(&fp.b).all(|m| m.is_diagonal()));
}

#[test]
fn missing_input_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let out = psdfact(&["factorize", "--r", "2", "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--input"), "{stderr}");
    assert!(stderr.contains("Usage"), "{stderr}");
}

#[test]
fn unreadable_or_invalid_input_exits_3() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("missing.txt");
    let out = psdfact(&[
        "factorize",
        "--input",
        p(&missing),
        "--r",
        "2",
        "--out",
        p(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let bad = tmp.path().join("bad.txt");
    fs::write(&bad, "1,2\n3,-4\n").unwrap();
    let out = psdfact(&[
        "factorize",
        "--input",
        p(&bad),
        "--r",
        "2",
        "--out",
        p(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn distance_fixture_from_values() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("d.txt");
    ok(&[
        "generate",
        "--kind",
        "distance",
        "--n",
        "3",
        "--values",
        "0,1,2",
        "--out",
        p(&path),
    ]);
    assert_eq!(fs::read_to_string(&path).unwrap(), "0,1,4\n1,0,1\n4,1,0\n");
}

#[test]
fn eval_on_planted_truth_is_exact() {
    let tmp = TempDir::new().unwrap();
    let (data, truth) = planted(tmp.path(), 4, 5);
    let stdout = ok(&["eval", "--input", &data, "--factors", &truth]);
    let err: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("err="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(err <= 1e-12, "err {err}");
    assert!(stdout.contains("objective="));
}

#[test]
fn certify_passes() {
    let stdout = ok(&["certify", "--trials", "500", "--seed", "1"]);
    let gap: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("min_domination_gap="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(gap >= -1e-9, "gap {gap}");
}

#[test]
fn same_flags_give_identical_history() {
    let tmp = TempDir::new().unwrap();
    let (data, _) = planted(tmp.path(), 5, 5);
    let run = |name: &str| {
        let out = tmp.path().join(name);
        ok(&[
            "factorize",
            "--input",
            &data,
            "--r",
            "2",
            "--sweeps",
            "100",
            "--restarts",
            "4",
            "--seed",
            "7",
            "--out",
            p(&out),
        ]);
        fs::read(out.join("history.csv")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn tensor_pipeline_runs() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("t.txt");
    ok(&[
        "generate",
        "--kind",
        "tensor",
        "--d",
        "3",
        "--r",
        "2",
        "--seed",
        "2",
        "--out",
        p(&data),
    ]);
    let out = tmp.path().join("run");
    ok(&[
        "tensor",
        "--input",
        p(&data),
        "--r",
        "2",
        "--restarts",
        "5",
        "--out",
        p(&out),
    ]);
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    let err: f64 = summary
        .lines()
        .find_map(|l| l.strip_prefix("err="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(err <= 1e-2, "err {err}");
    let history = fs::read_to_string(out.join("history.csv")).unwrap();
    assert!(history.starts_with("sweep,objective,err,kkt_1,kkt_2,kkt_3\n"));
}
