use std::path::Path;
use std::process::{Command, Output};

fn predfeed(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_predfeed"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("spawn predfeed")
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

#[test]
fn simulate_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let args = ["--seed", "3", "simulate", "--runs", "2", "--horizon", "0.5"];
    for dir in [&a, &b] {
        let o = predfeed(dir, &args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(read(&a, "trace.csv"), read(&b, "trace.csv"));
    assert_eq!(read(&a, "report.json"), read(&b, "report.json"));
    let report: serde_json::Value = serde_json::from_slice(&read(&a, "report.json")).unwrap();
    assert_eq!(report["runs"].as_array().map(|r| r.len()), Some(2));
}

#[test]
fn gen_data_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let args = [
        "--seed", "5", "gen-data", "--system", "linear2", "--traj", "2", "--T", "1", "--stride", "50",
    ];
    for dir in [&a, &b] {
        let o = predfeed(dir, &args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let bytes = read(&a, "dataset.ndset");
    assert_eq!(bytes, read(&b, "dataset.ndset"));
    let ds = predfeed::dataset::decode_dataset(&bytes).unwrap();
    assert_eq!(ds.manifest.system, "linear2");
    assert_eq!(ds.manifest.seed, 5);
}

#[test]
fn config_file_and_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "[scenario]\nsystem = \"linear1\"\nruns = 1\nhorizon = 0.2\n").unwrap();
    let o = predfeed(tmp.path(), &["--config", cfg.to_str().unwrap(), "simulate"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&read(tmp.path(), "report.json")).unwrap();
    assert_eq!(report["system"], "linear1");

    std::fs::write(&cfg, "[scenario]\nbogus = 1\n").unwrap();
    let o = predfeed(tmp.path(), &["--config", cfg.to_str().unwrap(), "simulate"]);
    assert_eq!(o.status.code(), Some(2));
    let o = predfeed(tmp.path(), &["simulate", "--system", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn lipschitz_bound_prints_json() {
    let tmp = tempfile::tempdir().unwrap();
    let o = predfeed(
        tmp.path(),
        &[
            "lipschitz-bound",
            "--c-f",
            "1",
            "--c-kappa",
            "1",
            "--x-bar",
            "1",
            "--u-bar",
            "1",
            "--phi-bar",
            "0.5",
        ],
    );
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["c_p"].as_f64().unwrap() > 1.0);
}
