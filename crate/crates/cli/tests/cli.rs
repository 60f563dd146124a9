use std::path::PathBuf;
use std::process::Command;

use nsqstab_cli::{exit, run};
use serde_json::Value;

fn data(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
        .display()
        .to_string()
}

fn invoke(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("nsqstab").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn with_report(args: &[&str]) -> (i32, Value, String) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    let mut full = args.to_vec();
    let p = path.display().to_string();
    full.extend(["--report", &p]);
    let (code, _, _) = invoke(&full);
    let text = std::fs::read_to_string(&path).unwrap();
    (code, serde_json::from_str(&text).unwrap(), text)
}

#[test]
fn vl_on_identity_columns_reports_margin_two() {
    let (code, report, _) = with_report(&["vl", "--mode", "sim", &data("identity_columns.txt")]);
    assert_eq!(code, exit::HOLDS);
    let v = &report["result"]["verdicts"][0];
    assert_eq!(v["status"], "FEASIBLE");
    assert!((v["certificate"]["margin"].as_f64().unwrap() - 2.0).abs() <= 1e-6);
    assert_eq!(report["exit_code"], 0);
    assert_eq!(report["tool"], "nsqstab");
    assert_eq!(report["config"]["args"]["command"], "vl");
    assert_eq!(report["input_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn vl_modes_on_contradictory_family() {
    assert_eq!(invoke(&["vl", &data("contradictory.txt")]).0, exit::REFUTED);
    assert_eq!(
        invoke(&["vl", "--mode", "ind", &data("contradictory.txt")]).0,
        exit::REFUTED
    );
    assert_eq!(
        invoke(&["vl", "--mode", "ind", &data("identity_columns.txt")]).0,
        exit::HOLDS
    );
}

#[test]
fn dus_on_unstable_diagonal_refutes_with_witness() {
    let (code, report, _) = with_report(&[
        "dus",
        &data("diag_neg.txt"),
        "--samples",
        "10",
        "--seed",
        "4",
    ]);
    assert_eq!(code, exit::REFUTED);
    let w = &report["result"]["sweep"]["witness"];
    assert_eq!(w["subset"], serde_json::json!([0]));
    assert!(w["margin"].as_f64().unwrap() < 0.0);
    assert_eq!(report["result"]["sweep"]["verdict"], "REFUTED");
}

#[test]
fn dus_holds_on_identity() {
    let (code, out, _) = invoke(&[
        "dus",
        &data("identity_columns.txt"),
        "--samples",
        "30",
        "--seed",
        "1",
        "--falsify-budget",
        "100",
    ]);
    assert_eq!(code, exit::HOLDS);
    assert!(out.contains("HOLDS-ON-SAMPLES"));
}

#[test]
fn dominance_gamma_theorem2_and_demo() {
    assert_eq!(
        invoke(&["dom", &data("identity_columns.txt")]).0,
        exit::HOLDS
    );
    assert_eq!(invoke(&["dom", &data("nonnormal.txt")]).0, exit::HOLDS);
    assert_eq!(
        invoke(&["dom", &data("contradictory.txt")]).0,
        exit::REFUTED
    );
    assert_eq!(
        invoke(&[
            "dom",
            "--form",
            "entrywise-absolute",
            &data("symmetric_f.txt")
        ])
        .0,
        exit::HOLDS
    );

    let (code, report, _) = with_report(&["gamma-verify", &data("worked.txt")]);
    assert_eq!(code, exit::HOLDS);
    assert_eq!(report["result"]["scaling"], serde_json::json!([1.0, 3.0]));

    assert_eq!(
        invoke(&["theorem2", &data("symmetric_f.txt"), "--seed", "1"]).0,
        exit::HOLDS
    );
    let (code, out, _) = invoke(&["theorem2", &data("nonnormal.txt"), "--seed", "1"]);
    assert_eq!(code, exit::REFUTED);
    assert!(out.contains("REJECTED"));

    let (code, report, _) = with_report(&["demo", &data("identity_columns.txt")]);
    assert_eq!(code, exit::HOLDS);
    assert_eq!(report["result"]["simulation"]["decays"], true);
    assert_eq!(
        invoke(&["demo", &data("diag_neg.txt"), "--t", "3"]).0,
        exit::REFUTED
    );
}

#[test]
fn enumeration_counts() {
    let (code, out, _) = invoke(&["enum", &data("large.txt")]);
    assert_eq!(code, exit::HOLDS);
    assert!(out.starts_with("12 selections"));
    let (_, out, _) = invoke(&["enum", "--reduced", "1", &data("worked.txt")]);
    assert!(out.starts_with("3 selections"));
}

#[test]
fn conjecture_exit_codes() {
    assert_eq!(
        invoke(&[
            "conjecture",
            "--sizes",
            "2,1",
            "--budget",
            "0",
            "--seed",
            "1"
        ])
        .0,
        exit::UNKNOWN
    );
    let (code, out, _) = invoke(&[
        "conjecture",
        "--sizes",
        "1,1",
        "--budget",
        "10",
        "--seed",
        "1",
        "--shift",
        "0.5",
    ]);
    assert_eq!(code, exit::HOLDS, "{out}");
}

#[test]
fn error_exit_codes() {
    let (code, _, err) = invoke(&["vl", "/nonexistent/matrix.txt"]);
    assert_eq!(code, exit::NO_INPUT);
    assert!(err.contains("cannot read"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "2 3\n1 1\n1 2 3\n4 5 6\n").unwrap();
    let (code, _, err) = invoke(&["vl", bad.to_str().unwrap()]);
    assert_eq!(code, exit::DATA);
    assert!(err.contains("line 2"), "{err}");

    assert_eq!(invoke(&["vl"]).0, exit::USAGE);
    assert_eq!(invoke(&["frobnicate"]).0, exit::USAGE);
    assert_eq!(
        invoke(&["dus", &data("diag_neg.txt"), "--samples", "3"]).0,
        exit::USAGE
    );
    assert_eq!(
        invoke(&["--jobs", "0", "vl", &data("identity_columns.txt")]).0,
        exit::USAGE
    );
    assert_eq!(
        invoke(&["--eig-tol=0", "vl", &data("identity_columns.txt")]).0,
        exit::DATA
    );

    let (code, out, _) = invoke(&["--help"]);
    assert_eq!(code, exit::HOLDS);
    assert!(out.contains("Usage"));
    assert_eq!(invoke(&["--version"]).0, exit::HOLDS);

    let (code, _, err) = invoke(&[
        "vl",
        &data("identity_columns.txt"),
        "--report",
        "/nonexistent/dir/r.json",
    ]);
    assert_eq!(code, exit::IO, "{err}");
}

#[test]
fn reports_are_byte_identical_across_reruns_and_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    let p = path.display().to_string();
    let file = data("large.txt");
    let args = [
        "dus",
        &file,
        "--samples",
        "50",
        "--seed",
        "9",
        "--falsify-budget",
        "60",
        "--report",
        &p,
    ];
    let mut texts = Vec::new();
    for _ in 0..2 {
        invoke(&args);
        texts.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(texts[0], texts[1]);

    let result_for = |jobs: &str| {
        let mut full = vec!["--jobs", jobs];
        full.extend(args);
        invoke(&full);
        let v: Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
        v["result"].clone()
    };
    assert_eq!(result_for("1"), result_for("4"));
}

#[test]
fn binary_honours_cap_environment_variable() {
    let bin = env!("CARGO_BIN_EXE_nsqstab");
    let status = Command::new(bin)
        .args(["enum", &data("large.txt")])
        .env("NSQSTAB_CAP", "5")
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(exit::DATA));
    assert!(String::from_utf8_lossy(&status.stderr).contains("cap 5"));

    let status = Command::new(bin)
        .args(["enum", &data("large.txt")])
        .env("NSQSTAB_CAP", "zero")
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(exit::USAGE));

    let status = Command::new(bin)
        .args(["enum", &data("large.txt")])
        .env_remove("NSQSTAB_CAP")
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(exit::HOLDS));
}
