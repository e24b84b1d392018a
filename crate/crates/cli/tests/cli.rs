use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn lyapset(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lyapset")).args(args).output().unwrap()
}

fn problem(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("problems").join(name)
}

fn analyze(name: &str, out: &Path) -> Output {
    lyapset(&[
        "analyze",
        problem(name).to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ])
}

fn report(dir: &Path, stem: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.report.json"))).unwrap()).unwrap()
}

#[test]
fn linear_sink_is_stable_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = analyze("linear_sink.json", dir.path());
    assert_eq!(out.status.code(), Some(0));
    let r = report(dir.path(), "linear_sink");
    assert_eq!(r["stability"]["completed"]["verdict"], "stable_evidence");
    assert_eq!(r["certificate"]["completed"]["verdict"], "accepted");
    assert_eq!(r["exit_code"], 0);
    for f in [
        "report.json",
        "svg",
        "roa.csv",
        "stability.csv",
        "converse.csv",
        "certificate.csv",
    ] {
        assert!(dir.path().join(format!("linear_sink.{f}")).exists(), "{f} missing");
    }
}

#[test]
fn unstable_problem_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = analyze("unstable.json", dir.path());
    assert_eq!(out.status.code(), Some(2));
    let r = report(dir.path(), "unstable");
    assert_eq!(r["stability"]["completed"]["verdict"], "unstable_witness");
    assert_eq!(r["certificate"]["completed"]["verdict"], "rejected");
}

#[test]
fn malformed_json_reports_byte_offset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\"dimension\": 2,\n").unwrap();
    let out = lyapset(&["analyze", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("byte 17"), "{err}");
}

#[test]
fn schema_error_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(
        &path,
        r#"{"dimension": 1, "field": ["-x1"], "set": {"type": "ball", "center": [0], "radius": "one"}}"#,
    )
    .unwrap();
    let out = lyapset(&["analyze", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("/set/radius"), "{err}");
}

#[test]
fn oscillator_plot_has_one_cell_per_grid_node() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(analyze("harmonic_oscillator.json", dir.path()).status.code(), Some(0));
    let rep = dir.path().join("harmonic_oscillator.report.json");
    let out = dir.path().join("replot.svg");
    let status = lyapset(&["plot", rep.to_str().unwrap(), "--out", out.to_str().unwrap()]).status;
    assert_eq!(status.code(), Some(0));
    let svg = std::fs::read_to_string(&out).unwrap();
    assert_eq!(svg.matches("class=\"roa-cell\"").count(), 21 * 21);
    // Re-plotting gives the same bytes the analyze run wrote.
    assert_eq!(
        svg,
        std::fs::read_to_string(dir.path().join("harmonic_oscillator.svg")).unwrap()
    );
}

#[test]
fn three_dimensional_plot_needs_axes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cube.json");
    std::fs::write(
        &path,
        r#"{"dimension": 3, "field": ["-x1", "-x2", "-x3"], "set": {"type": "point", "coords": [0, 0, 0]},
            "roa": {"box": [[-1, -1, -1], [1, 1, 1]], "resolution": 3}}"#,
    )
    .unwrap();
    assert_eq!(lyapset(&["analyze", path.to_str().unwrap()]).status.code(), Some(0));
    assert!(!dir.path().join("cube.svg").exists());
    let rep = dir.path().join("cube.report.json");
    assert_eq!(lyapset(&["plot", rep.to_str().unwrap()]).status.code(), Some(1));
    let out = lyapset(&["plot", rep.to_str().unwrap(), "--axes=1,3"]);
    assert_eq!(out.status.code(), Some(0));
    let svg = std::fs::read_to_string(dir.path().join("cube.svg")).unwrap();
    assert_eq!(svg.matches("class=\"roa-cell\"").count(), 9);
}

#[test]
fn selftest_filter_and_tolerance_scale() {
    let out = lyapset(&["selftest", "--filter=flow"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text
        .lines()
        .filter(|l| l.starts_with("PASS"))
        .all(|l| l.contains("[flow]")));
    assert!(!text.contains("FAIL"));

    let strict = Command::new(env!("CARGO_BIN_EXE_lyapset"))
        .args(["selftest", "--filter=flow"])
        .env("LYAPSET_TOL_SCALE", "1e-6")
        .output()
        .unwrap();
    assert_ne!(strict.status.code(), Some(0));

    assert_eq!(lyapset(&["selftest", "--filter=nope"]).status.code(), Some(1));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        assert_eq!(analyze("pitchfork.json", d.path()).status.code(), Some(0));
    }
    let mut names: Vec<_> = std::fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.len() >= 3);
    for n in names {
        assert_eq!(
            std::fs::read(a.path().join(&n)).unwrap(),
            std::fs::read(b.path().join(&n)).unwrap(),
            "{n:?}"
        );
    }
}
