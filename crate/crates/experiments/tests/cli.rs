use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gnh_core::GnhError;
use gnh_experiments::Error;

const SMALL: &[&str] = &["--sizes", "6,4,3", "--n", "20"];

fn gnh(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gnh"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn exit_codes_by_error_kind() {
    let cases = [
        (Error::config("x"), 2),
        (
            GnhError::Format {
                offset: 1,
                message: "x".into(),
            }
            .into(),
            3,
        ),
        (GnhError::Shape("x".into()).into(), 4),
        (GnhError::Resource("x".into()).into(), 5),
        (GnhError::Definiteness("x".into()).into(), 6),
        (GnhError::Numeric("x".into()).into(), 7),
        (GnhError::Training("x".into()).into(), 7),
        (GnhError::Capability("x".into()).into(), 9),
    ];
    for (e, c) in cases {
        assert_eq!(e.exit_code(), c, "{e}");
    }
}

#[test]
fn missing_seed_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = gnh(dir.path(), &[&["gen", "--out", "p"], SMALL].concat());
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    assert_eq!(
        code(&gnh(dir.path(), &["entry", "--set", "nosuchkey=1"])),
        2
    );
}

#[test]
fn truncated_ingest_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let mut idx = 0x803u32.to_be_bytes().to_vec();
    for d in [4u32, 2, 2] {
        idx.extend(d.to_be_bytes());
    }
    idx.extend([0u8; 10]);
    fs::write(dir.path().join("img"), &idx).unwrap();
    let out = gnh(
        dir.path(),
        &[
            "ingest",
            "--source",
            "mnist-autoencoder",
            "--images",
            "img",
            "--n",
            "0",
            "--out",
            "b",
        ],
    );
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("26"));
}

#[test]
fn gen_entry_and_bad_index() {
    let dir = tempfile::tempdir().unwrap();
    let out = gnh(
        dir.path(),
        &[&["gen", "--seed", "4", "--out", "p"], SMALL].concat(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("p.net").exists() && dir.path().join("p.batch").exists());

    let files = ["--net", "p.net", "--batch", "p.batch"];
    let ok = gnh(
        dir.path(),
        &[&["entry", "--k", "3", "--m", "7"][..], &files].concat(),
    );
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    let value = stdout_json(&ok)["results"]["value"].as_f64().unwrap();
    assert!(value.is_finite());

    let diag = gnh(
        dir.path(),
        &[&["entry", "--k", "7", "--m", "3"][..], &files].concat(),
    );
    assert_eq!(
        stdout_json(&diag)["results"]["value"].as_f64().unwrap(),
        value
    );

    let bad = gnh(
        dir.path(),
        &[&["entry", "--k", "43", "--m", "0"][..], &files].concat(),
    );
    assert_eq!(code(&bad), 4);
}

#[test]
fn tiny_budget_exits_with_five() {
    let dir = tempfile::tempdir().unwrap();
    let out = gnh(
        dir.path(),
        &[&["precompute", "--seed", "1", "--byte-budget", "64"], SMALL].concat(),
    );
    assert_eq!(code(&out), 5);
}

#[test]
fn report_reruns_reproduce_results() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        &[
            "build-hmatrix",
            "--seed",
            "2",
            "--preset",
            "4/4/1e-4",
            "--out",
            "h.bin",
        ][..],
        SMALL,
    ]
    .concat();
    let first = gnh(dir.path(), &[&args[..], &["--report", "r.json"]].concat());
    assert_eq!(
        code(&first),
        0,
        "{}",
        String::from_utf8_lossy(&first.stderr)
    );
    let a = fs::read(dir.path().join("h.bin")).unwrap();
    let second = gnh(
        dir.path(),
        &["build-hmatrix", "--config", "r.json", "--out", "h2.bin"],
    );
    assert_eq!(
        code(&second),
        0,
        "{}",
        String::from_utf8_lossy(&second.stderr)
    );
    assert_eq!(a, fs::read(dir.path().join("h2.bin")).unwrap());
    assert_eq!(
        stdout_json(&first)["results"],
        stdout_json(&second)["results"]
    );
}

#[test]
fn memory_needs_no_data() {
    let dir = tempfile::tempdir().unwrap();
    let out = gnh(
        dir.path(),
        &["memory", "--sizes", "784,20,10", "--n", "10000"],
    );
    assert_eq!(code(&out), 0);
    assert_eq!(
        stdout_json(&out)["results"]["m_gnh"].as_u64().unwrap(),
        1_012_512_400
    );
}
