//! End-to-end tests that drive the installed binary against the fixture
//! networks and check stdout, exit codes, and report determinism.

use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(name: &str) -> String {
    let mut path = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    path.pop();
    path.pop();
    path.push("fixtures");
    path.push(name);
    path.to_string_lossy().into_owned()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_morsenet"))
        .args(args)
        .output()
        .expect("failed to launch binary")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

#[test]
fn classify_reports_normal_form_and_original_verdict() {
    let out = run(&["classify", "--input", &fixture("ex_normalform.json")]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("Bottleneck after normal form; original Augmented"), "{text}");
    assert!(text.contains("C3"), "{text}");
}

#[test]
fn classify_certifies_non_augmented_networks() {
    let out = run(&["classify", "--input", &fixture("non_augmented.json")]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("C1"), "{text}");
    assert!(text.contains("TheoremCertified"), "{text}");
}

#[test]
fn critical_finds_the_reduced_example_point() {
    let out = run(&[
        "critical",
        "--input",
        &fixture("ex_classes_reduced.json"),
        "--domain",
        "-3,3",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("-0.5"), "{text}");
    assert!(text.contains("critical points (1)"), "{text}");
}

#[test]
fn malformed_fixture_exits_with_error_naming_the_field() {
    let out = run(&["classify", "--input", &fixture("bad_shape.json")]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("W1"), "{err}");
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_file_is_a_runtime_error() {
    let out = run(&["classify", "--input", "/nonexistent/net.json"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a.json");
    let second = dir.path().join("b.json");
    for path in [&first, &second] {
        let out = run(&[
            "classify",
            "--input",
            &fixture("ex_classes.json"),
            "--seed",
            "7",
            "--output",
            path.to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    let a = std::fs::read(&first).unwrap();
    let b = std::fs::read(&second).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b, "reports differ between identical runs");
}

#[test]
fn node_fixture_yields_the_closed_form_critical_point() {
    let out = run(&["classify", "--input", &fixture("node_augmented.json")]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("C2"), "{text}");
    assert!(text.contains("0.693147"), "{text}");
}

#[test]
fn ode_flow_reports_liouville_residual() {
    let out = run(&[
        "ode-flow",
        "--input",
        &fixture("node_augmented.json"),
        "--point",
        "0.25",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.to_lowercase().contains("liouville"), "{text}");
}

#[test]
fn embed_then_classify_recovers_the_planted_minimum() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("embedded.json");
    let out = run(&[
        "embed",
        "--target",
        "sqdist:0.25,-0.5",
        "--m",
        "3",
        "--output",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(&["classify", "--input", path.to_str().unwrap()]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("0.25"), "{text}");
    assert!(text.contains("-0.5"), "{text}");
}

#[test]
fn normalize_writes_an_equivalent_reduced_network() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("reduced.json");
    let out = run(&[
        "normalize",
        "--input",
        &fixture("ex_normalform.json"),
        "--output",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("over 200 samples"), "{text}");
    let out = run(&["classify", "--input", path.to_str().unwrap()]);
    assert!(out.status.success());
}

#[test]
fn verify_suite_passes_and_failures_are_visible() {
    let out = run(&["verify", "--seed", "42"]);
    assert!(out.status.success(), "{}", stdout(&out));
    let text = stdout(&out);
    assert!(text.contains("pass"), "{text}");
    assert!(!text.contains("FAIL"), "{text}");
}

#[test]
fn morse_check_reports_the_rank_condition() {
    let out = run(&[
        "morse-check",
        "--input",
        &fixture("augmented.json"),
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("rank"), "{text}");
}
