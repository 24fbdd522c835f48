use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn run(dir: &Path, cmd: &str, config: &str, extra: &[&str]) -> (Output, PathBuf) {
    let cfg = dir.join(format!("{cmd}.json"));
    std::fs::write(&cfg, config).unwrap();
    let out = dir.join(format!("out-{cmd}-{}", extra.join("_")));
    let output = Command::new(env!("CARGO_BIN_EXE_dpp-transfer"))
        .arg(cmd)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(extra)
        .output()
        .unwrap();
    (output, out)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn transfer_constant_kernel_two_cells() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, out) = run(
        tmp.path(),
        "transfer",
        r#"{"schema_version":1,"kernel":{"preset":"constant-rank1"},"partition":{"type":"uniform","cells":2}}"#,
        &[],
    );
    assert_eq!(o.status.code(), Some(0));
    let report = read_json(&out.join("report.json"));
    assert!(report["verify"]["tv"].as_f64().unwrap() < 1e-10);
    assert_eq!(report["pass"], true);
    let q = read_json(&out.join("Q.json"));
    assert_eq!(q["config_hash"], report["config_hash"]);
    assert_eq!(q["version"], dpp_transfer::VERSION);
    for row in q["transferred"]["Q"].as_array().unwrap() {
        for x in row.as_array().unwrap() {
            assert!((x.as_f64().unwrap() - 0.5).abs() < 1e-15);
        }
    }
}

#[test]
fn singleton_partition_round_trips_bitwise() {
    let tmp = tempfile::tempdir().unwrap();
    let p: [f64; 4] = [0.15, 0.8, 0.333, 0.5];
    let (o, out) = run(
        tmp.path(),
        "transfer",
        r#"{"schema_version":1,"kernel":{"preset":"diag","p":[0.15,0.8,0.333,0.5]},"partition":{"type":"singletons"}}"#,
        &[],
    );
    assert_eq!(o.status.code(), Some(0));
    let json: dpp_transfer::transference::TransferredKernelJson =
        serde_json::from_value(read_json(&out.join("Q.json"))["transferred"].clone()).unwrap();
    let q = dpp_transfer::TransferredKernel::from_json(&json).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            let want = if i == j { p[i] } else { 0.0 };
            assert_eq!(q.q[[i, j]].to_bits(), want.to_bits());
        }
    }
}

#[test]
fn unreachable_tolerance_exits_with_leakage() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, out) = run(
        tmp.path(),
        "transfer",
        r#"{"schema_version":1,"kernel":{"preset":"fourier-projection","rank":3},"partition":{"type":"uniform","cells":2},"tol":1e-300}"#,
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "leakage");
    assert_eq!(read_json(&out.join("error.json"))["exit_code"], 2);
}

#[test]
fn sample_full_diagonal() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, out) = run(
        tmp.path(),
        "sample",
        r#"{"schema_version":1,"kernel":{"preset":"diag","p":[1,1,0]},"n_samples":3}"#,
        &["--seed", "9"],
    );
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(out.join("samples.csv")).unwrap(), "0,1\n0,1\n0,1\n");
}

#[test]
fn sample_is_deterministic_and_sized() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = r#"{"schema_version":1,"kernel":{"preset":"matrix","matrix":[[0.5,0.5],[0.5,0.5]]},"n_samples":100000,"seed":3}"#;
    let (a, out_a) = run(tmp.path(), "sample", cfg, &[]);
    let (b, out_b) = run(tmp.path(), "sample", cfg, &["--threads", "3"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(b.status.code(), Some(0));
    let x = std::fs::read(out_a.join("samples.csv")).unwrap();
    let y = std::fs::read(out_b.join("samples.csv")).unwrap();
    assert_eq!(x, y);
    let text = String::from_utf8(x).unwrap();
    assert_eq!(text.lines().count(), 100_000);
    assert!(text.lines().all(|l| l == "0" || l == "1"));
    let (c, out_c) = run(tmp.path(), "sample", cfg, &["--seed", "4"]);
    assert_eq!(c.status.code(), Some(0));
    assert_ne!(std::fs::read(out_c.join("samples.csv")).unwrap(), text.as_bytes());
}

#[test]
fn missing_seed_and_unknown_keys_are_validation_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, _) = run(
        tmp.path(),
        "sample",
        r#"{"schema_version":1,"kernel":{"preset":"diag","p":[0.5]},"n_samples":3}"#,
        &[],
    );
    assert_eq!(o.status.code(), Some(1));
    let (o, _) = run(
        tmp.path(),
        "count-law",
        r#"{"schema_version":1,"kernel":{"preset":"diag","p":[0.5]},"partition":{"type":"singletons"},"tolerance":1}"#,
        &[],
    );
    assert_eq!(o.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "json");
}

#[test]
fn verify_constant_kernel_matrix() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, out) = run(
        tmp.path(),
        "verify",
        r#"{"schema_version":1,"kernel":{"preset":"constant-rank1"},"partitions":[{"type":"uniform","cells":2},{"type":"uniform","cells":4},{"type":"uniform","cells":8}]}"#,
        &[],
    );
    assert_eq!(o.status.code(), Some(0));
    let v = read_json(&out.join("verify.json"));
    let results = v["results"].as_array().unwrap();
    assert_eq!(results.len(), 3);
    for r in results {
        assert!(r["verify"]["tv"].as_f64().unwrap() < 1e-8);
    }
}

#[test]
fn count_law_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, out) = run(
        tmp.path(),
        "count-law",
        r#"{"schema_version":1,"kernel":{"preset":"diag","p":[0.25,0.5]},"partition":{"type":"singletons"}}"#,
        &[],
    );
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(out.join("countlaw.csv")).unwrap();
    assert!(csv.starts_with("{0},{1},probability\n"));
    let law = read_json(&out.join("countlaw.json"));
    let total: f64 = law["law"]["atoms"].as_array().unwrap().iter().map(|a| a["p"].as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn tail_sweep_on_half_diagonal_is_flat() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, out) = run(
        tmp.path(),
        "tail-sweep",
        r#"{"schema_version":1,"kernel":{"preset":"diag","p":[0.5,0.5,0.5,0.5,0.5,0.5,0.5,0.5]},"tail":{"near":[0],"radii":[1,2,4],"event":{"type":"near_parity","even":true},"method":"exact"}}"#,
        &[],
    );
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("parameter,estimate,std_error,n_effective"));
    for l in lines {
        let est: f64 = l.split(',').nth(1).unwrap().parse().unwrap();
        assert!(est.abs() < 1e-12);
    }
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["config"]["tail"]["method"], "exact");
}

#[test]
fn levy_finest_row_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, out) = run(
        tmp.path(),
        "levy",
        r#"{"schema_version":1,"kernel":{"preset":"discretized-sine","n":8},"partition":{"type":"uniform","cells":2},"n_samples":4000,"seed":1,"levy":{"levels":2,"event":{"cells":[1],"kind":{"type":"parity","even":false}}}}"#,
        &[],
    );
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(out.join("levy.csv")).unwrap();
    let last = csv.lines().last().unwrap();
    assert!(last.starts_with("2,0e0,"), "{last}");
}

#[test]
fn coarse_grid_suggests_finer_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, _) = run(
        tmp.path(),
        "sample",
        r#"{"schema_version":1,"kernel":{"preset":"fourier-projection","rank":3},"grid_cells":64,"tol":1e-3,"n_samples":5,"seed":1}"#,
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert!(err["message"].as_str().unwrap().contains("finer grid"));
}
