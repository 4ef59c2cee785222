use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_axdse"))
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/digits")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn axdse")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "axdse {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn error_line(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("stderr line");
    serde_json::from_str(line).unwrap_or_else(|_| panic!("not JSON: {line}"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Quantizes the digits MLP into `dir`, returning (model dir, data dir).
fn quantized(dir: &Path) -> (PathBuf, PathBuf) {
    let f = fixtures();
    ok(&[
        "quantize",
        "--model",
        s(&f.join("mlp_f32")),
        "--data",
        s(&f.join("calib_f32")),
        "--test-data",
        s(&f.join("test_f32")),
        "--out",
        s(dir),
    ]);
    (dir.join("model"), dir.join("data"))
}

fn dir_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

#[test]
fn quantize_round_trip_and_idempotence() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (ma, da) = quantized(a.path());
    let (mb, db) = quantized(b.path());
    assert_eq!(dir_files(&ma), dir_files(&mb));
    assert_eq!(dir_files(&da), dir_files(&db));

    let out = ok(&["eval", "--model", s(&ma), "--data", s(&da)]);
    assert!(out.contains("images      1000"), "{out}");
    assert!(out.contains("mask        000"), "{out}");
}

#[test]
fn quantize_missing_calibration_names_path() {
    let t = tempfile::tempdir().unwrap();
    let missing = t.path().join("nowhere/data.json");
    let out = run(&[
        "quantize",
        "--model",
        s(&fixtures().join("mlp_f32")),
        "--data",
        s(&missing),
        "--out",
        s(&t.path().join("q")),
    ]);
    assert_eq!(out.status.code(), Some(4));
    let e = error_line(&out);
    assert_eq!(e["error"], "io");
    assert!(e["message"].as_str().unwrap().contains("nowhere"));
    assert!(!t.path().join("q").exists());
}

fn oracle_metrics(k: u32) -> (f64, f64, f64, f64) {
    let mut sum = 0i64;
    let mut worst = 0i64;
    let mut rel = 0f64;
    let mut rel_n = 0u64;
    let mut errs = 0u64;
    for a in -128i64..=127 {
        for b in -128i64..=127 {
            let ta = (a >> k) << k;
            let tb = (b >> k) << k;
            let e = (ta * tb - a * b).abs();
            sum += e;
            worst = worst.max(e);
            if e != 0 {
                errs += 1;
            }
            if a * b != 0 {
                rel += e as f64 / (a * b).abs() as f64;
                rel_n += 1;
            }
        }
    }
    (
        sum as f64 / 65536.0 / 16384.0 * 100.0,
        worst as f64 / 16384.0 * 100.0,
        rel / rel_n as f64 * 100.0,
        errs as f64 / 65536.0 * 100.0,
    )
}

#[test]
fn characterize_matches_oracle() {
    let t = tempfile::tempdir().unwrap();
    let table = ok(&[
        "characterize",
        "--mult",
        "exact",
        "--mult",
        "trunc3",
        "--out",
        s(t.path()),
    ]);
    assert!(table.lines().count() == 3, "{table}");

    let exact: Value =
        serde_json::from_slice(&fs::read(t.path().join("exact.profile.json")).unwrap()).unwrap();
    for f in ["mae_pct", "wce_pct", "mre_pct", "ep_pct"] {
        assert_eq!(exact[f].as_f64(), Some(0.0), "{f}");
    }

    let p: Value =
        serde_json::from_slice(&fs::read(t.path().join("trunc3.profile.json")).unwrap()).unwrap();
    let (mae, wce, mre, ep) = oracle_metrics(3);
    for (f, want) in [
        ("mae_pct", mae),
        ("wce_pct", wce),
        ("mre_pct", mre),
        ("ep_pct", ep),
    ] {
        let got = p[f].as_f64().unwrap();
        assert!((got - want).abs() < 1e-9, "{f}: {got} vs {want}");
    }
    // table and JSON agree at the printed precision
    let row = table.lines().find(|l| l.starts_with("trunc3")).unwrap();
    assert!(row.contains(&format!("{mae:.4}")), "{row}");
}

#[test]
fn characterize_lut_file_and_bad_size() {
    let t = tempfile::tempdir().unwrap();
    let lut = t.path().join("t2.mul8s");
    let mut bytes = Vec::with_capacity(131072);
    for a in -128i32..=127 {
        for b in -128i32..=127 {
            let v = (((a >> 2) << 2) * ((b >> 2) << 2)) as i16;
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(&lut, &bytes).unwrap();
    fs::write(
        t.path().join("t2.json"),
        r#"{"power_mw": 0.2, "area_um2": 400.0}"#,
    )
    .unwrap();
    let from_lut = ok(&["characterize", "--mult", s(&lut)]);
    let builtin = ok(&["characterize", "--mult", "trunc2"]);
    let cells = |s: &str| {
        s.lines()
            .nth(1)
            .unwrap()
            .split_whitespace()
            .skip(1)
            .take(4)
            .map(String::from)
            .collect::<Vec<_>>()
    };
    assert_eq!(cells(&from_lut), cells(&builtin));

    let bad = t.path().join("bad.mul8s");
    fs::write(&bad, &bytes[..1000]).unwrap();
    fs::write(
        t.path().join("bad.json"),
        r#"{"power_mw": 0.2, "area_um2": 400.0}"#,
    )
    .unwrap();
    let out = run(&["characterize", "--mult", s(&bad)]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_line(&out)["error"], "format");
}

#[test]
fn inject_rejects_zero_repetitions() {
    let t = tempfile::tempdir().unwrap();
    let (m, d) = quantized(t.path());
    let out = run(&[
        "inject",
        "--model",
        s(&m),
        "--data",
        s(&d),
        "--reps",
        "0",
        "--out",
        s(&t.path().join("c")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"], "usage");
}

#[test]
fn inject_is_reproducible() {
    let t = tempfile::tempdir().unwrap();
    let (m, d) = quantized(t.path());
    let go = |name: &str, threads: &str| {
        let out = t.path().join(name);
        ok(&[
            "inject",
            "--model",
            s(&m),
            "--data",
            s(&d),
            "--mult",
            "trunc2",
            "--mask",
            "101",
            "--seed",
            "99",
            "--reps",
            "150",
            "--images",
            "300",
            "--threads",
            threads,
            "--out",
            s(&out),
        ]);
        out
    };
    let a = go("a", "1");
    let b = go("b", "3");
    assert_eq!(dir_files(&a), dir_files(&b));

    let rep: Value = serde_json::from_slice(&fs::read(a.join("campaign.json")).unwrap()).unwrap();
    let sm = &rep["summary"];
    let base = sm["baseline_accuracy"].as_f64().unwrap();
    let mean = sm["mean_faulty_accuracy"].as_f64().unwrap();
    assert!((sm["vulnerability"].as_f64().unwrap() - (base - mean)).abs() < 1e-12);
    assert_eq!(rep["repetitions"].as_array().unwrap().len(), 150);
    assert_eq!(rep["context"]["mask"], "101");
    let csv = fs::read_to_string(a.join("campaign.csv")).unwrap();
    assert_eq!(csv.lines().count(), 151);
}

#[test]
fn entropy_seed_is_recorded() {
    let t = tempfile::tempdir().unwrap();
    let (m, d) = quantized(t.path());
    let out = t.path().join("c");
    ok(&[
        "inject",
        "--model",
        s(&m),
        "--data",
        s(&d),
        "--reps",
        "5",
        "--images",
        "50",
        "--out",
        s(&out),
    ]);
    let rep: Value = serde_json::from_slice(&fs::read(out.join("campaign.json")).unwrap()).unwrap();
    assert_ne!(rep["plan"]["master_seed"].as_u64(), Some(0));
}

#[test]
fn dse_enumerates_and_reproduces() {
    let t = tempfile::tempdir().unwrap();
    let (m, d) = quantized(t.path());
    let go = |name: &str, threads: &str| {
        let out = t.path().join(name);
        ok(&[
            "dse",
            "--model",
            s(&m),
            "--data",
            s(&d),
            "--mult",
            "trunc2",
            "--seed",
            "5",
            "--reps",
            "60",
            "--images",
            "200",
            "--threads",
            threads,
            "--out",
            s(&out),
        ]);
        out
    };
    let a = go("a", "1");
    let b = go("b", "4");
    assert_eq!(dir_files(&a), dir_files(&b));

    let points = fs::read_to_string(a.join("points.csv")).unwrap();
    let pareto = fs::read_to_string(a.join("pareto.csv")).unwrap();
    let rows: Vec<&str> = points.lines().skip(1).collect();
    assert_eq!(rows.len(), 8);
    assert!(rows[0].starts_with("exact,000,0.0000,"));
    for row in pareto.lines().skip(1) {
        assert!(rows.contains(&row), "{row} not in points.csv");
    }

    let run_json: Value = serde_json::from_slice(&fs::read(a.join("run.json")).unwrap()).unwrap();
    assert_eq!(run_json["seed"]["used"], 5);
    assert_eq!(run_json["plan"]["repetitions"], 60);
    assert_eq!(run_json["points"], 8);
    assert_eq!(run_json["model"]["sha256"].as_str().unwrap().len(), 64);

    // pareto subcommand on the written points reproduces pareto.csv
    let p = t.path().join("p");
    ok(&[
        "pareto",
        "--points",
        s(&a.join("points.csv")),
        "--out",
        s(&p),
    ]);
    assert_eq!(fs::read_to_string(p.join("pareto.csv")).unwrap(), pareto);
}

#[test]
fn dse_rejects_bad_objectives() {
    let t = tempfile::tempdir().unwrap();
    let (m, d) = quantized(t.path());
    let out = run(&[
        "dse",
        "--model",
        s(&m),
        "--data",
        s(&d),
        "--mult",
        "trunc1",
        "--objectives",
        "speed:min,fi_drop:min",
        "--out",
        s(&t.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_errors_are_json() {
    let out = run(&["eval", "--model"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"], "usage");
}
