use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use omrf::bench::{Manifest, MANIFEST_FILE};
use omrf::io::{read_chain, read_json, ChainSidecar};

const SMALL: &str = r#"{
  "seed": 11,
  "sampler": {"iterations": 1500, "burn_in": 500},
  "mc_samples": {"inner": 300, "outer": 3000},
  "simulation": {"n": 400, "p": 4, "structure_type": "random", "k_str": 1, "k_sample": 1, "dichotomize_at": 2},
  "benchmark": {"structures": ["random"], "p": [3], "n": [200], "replicates": 3, "methods": ["pseudo", "core"]}
}"#;

fn omrf(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_omrf"))
        .args(args)
        .current_dir(dir)
        .env_remove("MRF_ENUM_CAP")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn workspace(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.json"), config).unwrap();
    dir
}

fn files_in(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

fn simulated(dir: &Path) -> PathBuf {
    ok(&omrf(&["--config", "cfg.json", "--out", "sim", "simulate"], dir));
    dir.join("sim/sim_s000_k000.csv")
}

#[test]
fn simulate_single_cell_writes_two_files() {
    let ws = workspace(SMALL);
    simulated(ws.path());
    let files = files_in(&ws.path().join("sim"));
    assert_eq!(files.len(), 2, "{files:?}");
    let record: serde_json::Value = read_json(&files[1]).unwrap();
    assert_eq!(record["config"]["seed"], 11);
    assert_eq!(record["config"]["mc_samples"]["outer"], 3000);
    assert!(record["provenance"]["sample_seed"].is_u64());
}

#[test]
fn simulate_is_deterministic() {
    let ws = workspace(SMALL);
    ok(&omrf(&["--config", "cfg.json", "--out", "a", "simulate"], ws.path()));
    ok(&omrf(
        &["--config", "cfg.json", "--out", "b", "simulate", "--threads", "3"],
        ws.path(),
    ));
    let a = std::fs::read(ws.path().join("a/sim_s000_k000.csv")).unwrap();
    let b = std::fs::read(ws.path().join("b/sim_s000_k000.csv")).unwrap();
    assert_eq!(a, b);
    ok(&omrf(
        &["--config", "cfg.json", "--out", "c", "--seed", "12", "simulate"],
        ws.path(),
    ));
    assert_ne!(a, std::fs::read(ws.path().join("c/sim_s000_k000.csv")).unwrap());
}

#[test]
fn simulate_full_plan_count() {
    let ws = workspace(
        r#"{"seed": 3, "simulation": {"n": 60, "p": 3, "structure_type": "smallworld", "gibbs_sweeps": 20, "dichotomize_at": 2}}"#,
    );
    ok(&omrf(&["--config", "cfg.json", "--out", "sim", "simulate"], ws.path()));
    let csvs = files_in(&ws.path().join("sim"))
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .count();
    assert_eq!(csvs, 100);
}

#[test]
fn sample_pseudo_on_bundled_source() {
    let ws = workspace(r#"{"sampler": {"iterations": 600, "burn_in": 200}}"#);
    let source = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/source.csv");
    let out = omrf(
        &[
            "--config",
            "cfg.json",
            "--out",
            "c",
            "sample",
            "--method",
            "pseudo",
            "--data",
            source.to_str().unwrap(),
        ],
        ws.path(),
    );
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("acceptance rate"));
    let (chain, side) = read_chain(&ws.path().join("c/chain_pseudo.csv")).unwrap();
    assert_eq!(chain.len(), 400);
    assert_eq!((side.p, side.m, side.n), (10, 3, 3376));
}

#[test]
fn core_sidecar_carries_rescaling_and_reproduces() {
    let ws = workspace(SMALL);
    let data = simulated(ws.path());
    let data = data.to_str().unwrap();
    ok(&omrf(
        &[
            "--config", "cfg.json", "--out", "c", "sample", "--method", "core", "--data", data,
        ],
        ws.path(),
    ));
    let side: ChainSidecar = read_json(&ws.path().join("c/chain_core.json")).unwrap();
    let record = side.rescaling.clone().expect("rescaling recorded");
    let matrix = record.into_matrix().unwrap();
    assert_eq!(matrix.dim(), 4 + 6);

    // The echoed config alone reproduces the chain.
    let echo = serde_json::to_string(&side.config.unwrap()).unwrap();
    std::fs::write(ws.path().join("echo.json"), echo).unwrap();
    ok(&omrf(&["--config", "echo.json", "--out", "r", "sample"], ws.path()));
    assert_eq!(
        std::fs::read(ws.path().join("c/chain_core.csv")).unwrap(),
        std::fs::read(ws.path().join("r/chain_core.csv")).unwrap()
    );
}

#[test]
fn exact_beyond_enumeration_cap_exits_3() {
    let ws = workspace("{}");
    let mut text = String::from("q1,q2,q3,q4,q5,q6,q7,q8,q9,q10,q11,q12\n");
    for r in 0..40 {
        let row: Vec<String> = (0..12).map(|c| ((r * 7 + c * 3) % 4).to_string()).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    std::fs::write(ws.path().join("wide.csv"), text).unwrap();
    let out = omrf(
        &["--out", "x", "sample", "--method", "exact", "--data", "wide.csv"],
        ws.path(),
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn enumeration_cap_from_environment() {
    let ws = workspace(SMALL);
    let data = simulated(ws.path());
    let out = Command::new(env!("CARGO_BIN_EXE_omrf"))
        .args([
            "--config", "cfg.json", "--out", "x", "sample", "--method", "exact", "--data",
        ])
        .arg(&data)
        .current_dir(ws.path())
        .env("MRF_ENUM_CAP", "16")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn invalid_input_exits_2() {
    let ws = workspace(r#"{"sampler": {"iters": 10}}"#);
    assert_eq!(
        omrf(&["--config", "cfg.json", "sample", "--data", "x.csv"], ws.path())
            .status
            .code(),
        Some(2)
    );
    std::fs::write(ws.path().join("bad.csv"), "a,b\n0,1\n1,x\n").unwrap();
    assert_eq!(omrf(&["sample", "--data", "bad.csv"], ws.path()).status.code(), Some(2));
    assert_eq!(
        omrf(&["sample", "--data", "missing.csv"], ws.path()).status.code(),
        Some(2)
    );
    let out = omrf(&["simulate"], ws.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fit_with_structure() {
    let ws = workspace(SMALL);
    let data = simulated(ws.path());
    std::fs::write(ws.path().join("s.csv"), "i,j\n1,2\n3,4\n").unwrap();
    ok(&omrf(
        &[
            "--config",
            "cfg.json",
            "--out",
            "f",
            "fit",
            "--data",
            data.to_str().unwrap(),
            "--structure",
            "s.csv",
        ],
        ws.path(),
    ));
    let fit: serde_json::Value = read_json(&ws.path().join("f/fit.json")).unwrap();
    let names: Vec<String> = serde_json::from_value(fit["parameters"].clone()).unwrap();
    let theta: Vec<f64> = serde_json::from_value(fit["estimate"]["theta_star"].clone()).unwrap();
    let se: Vec<f64> = serde_json::from_value(fit["standard_errors"].clone()).unwrap();
    for (k, name) in names.iter().enumerate() {
        let fixed = name.starts_with("theta_") && name != "theta_1_2" && name != "theta_3_4";
        assert_eq!(theta[k] == 0.0, fixed, "{name}");
        assert_eq!(se[k] == 0.0, fixed, "{name}");
    }
    assert_eq!(fit["estimate"]["converged"], true);
}

#[test]
fn calibrate_and_metrics() {
    let ws = workspace(SMALL);
    let data = simulated(ws.path());
    let data = data.to_str().unwrap();
    for m in ["exact", "pseudo"] {
        ok(&omrf(
            &[
                "--config", "cfg.json", "--out", "c", "sample", "--method", m, "--data", data,
            ],
            ws.path(),
        ));
    }
    ok(&omrf(
        &[
            "--config",
            "cfg.json",
            "--out",
            "c",
            "calibrate",
            "--data",
            data,
            "--chain",
            "c/chain_pseudo.csv",
            "--method",
            "ph-ghw",
        ],
        ws.path(),
    ));
    let (ph, _) = read_chain(&ws.path().join("c/chain_ph-ghw.csv")).unwrap();
    assert_eq!(ph.method.as_str(), "ph-ghw");
    assert!(ph.rescaling.is_some());

    ok(&omrf(
        &[
            "--config",
            "cfg.json",
            "--out",
            "m",
            "metrics",
            "--exact",
            "c/chain_exact.csv",
            "--chain",
            "c/chain_pseudo.csv",
            "--chain",
            "c/chain_ph-ghw.csv",
        ],
        ws.path(),
    ));
    let mut rdr = csv::Reader::from_path(ws.path().join("m/report.csv")).unwrap();
    let header = rdr.headers().unwrap().clone();
    assert_eq!(
        header.iter().collect::<Vec<_>>(),
        ["condition", "method", "parameter", "metric", "value"]
    );
    let mut etas = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        if &rec[3] == "eta" {
            let v: f64 = rec[4].parse().unwrap();
            assert!((0.0..=1.0).contains(&v));
            etas += 1;
        }
    }
    assert_eq!(etas, 2 * 10);
    let report: omrf_core::metrics::MetricsReport = read_json(&ws.path().join("m/report.json")).unwrap();
    assert_eq!(report.methods.len(), 2);
    assert!(ws.path().join("m/config.json").exists());

    // Calibrating a non-pseudo chain is rejected.
    let out = omrf(
        &[
            "--config",
            "cfg.json",
            "--out",
            "c",
            "calibrate",
            "--data",
            data,
            "--chain",
            "c/chain_exact.csv",
        ],
        ws.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    // A missing exact chain is a validation error.
    let out = omrf(
        &[
            "--config",
            "cfg.json",
            "--out",
            "m",
            "metrics",
            "--chain",
            "c/chain_pseudo.csv",
        ],
        ws.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

fn aggregate_without_timing(dir: &Path) -> Vec<String> {
    std::fs::read_to_string(dir.join("aggregate.csv"))
        .unwrap()
        .lines()
        .filter(|l| !l.contains("wall_time"))
        .map(str::to_string)
        .collect()
}

#[test]
fn benchmark_resume_and_order_invariance() {
    let ws = workspace(SMALL);
    ok(&omrf(
        &["--config", "cfg.json", "--out", "b1", "--threads", "1", "benchmark"],
        ws.path(),
    ));
    ok(&omrf(
        &["--config", "cfg.json", "--out", "b2", "--threads", "3", "benchmark"],
        ws.path(),
    ));
    let agg = aggregate_without_timing(&ws.path().join("b1"));
    assert_eq!(agg, aggregate_without_timing(&ws.path().join("b2")));
    assert_eq!(agg[0], "condition,method,metric,subset,count,median,q05,q95");

    let b1 = ws.path().join("b1");
    let manifest: Manifest = read_json(&b1.join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.cells.len(), 3);

    // Simulate an interruption: one cell lost its output.
    std::fs::remove_dir_all(b1.join("random_p3_n200/rep001")).unwrap();
    let out = omrf(
        &[
            "--config",
            "cfg.json",
            "--out",
            "b1",
            "--threads",
            "2",
            "--resume",
            "benchmark",
        ],
        ws.path(),
    );
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("cells run: 1, skipped: 2"));
    assert_eq!(aggregate_without_timing(&b1), agg);

    // Resuming under a different design is refused.
    let out = omrf(
        &[
            "--config",
            "cfg.json",
            "--out",
            "b1",
            "--seed",
            "99",
            "--resume",
            "benchmark",
        ],
        ws.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}
