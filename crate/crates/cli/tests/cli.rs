use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn colrel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_colrel")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn jsonl(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

const PAIRED: &str = r#"
[graph]
n = 10
topology = { kind = "ring", k = 1 }
p = [0.1, 0.2, 0.3, 0.1, 0.1, 0.5, 0.8, 0.1, 0.2, 0.9]

[objective]
d = 5
heterogeneity = 1.0

[protocol]
variants = ["colrel", "fedavg_blind_dropout"]
local_steps = 4
rounds = 30
eta = { schedule = "constant", value = 0.02 }

[experiment]
seeds = 3
"#;

#[test]
fn paired_seeds_share_keys() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), PAIRED);
    let out = tmp.path().join("traces");
    let res = colrel(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_ok(&res);

    let keys = |name: &str| -> (Value, BTreeSet<(u64, u64)>) {
        let lines = jsonl(&out.join(name));
        let header = lines[0]["header"].clone();
        let keys = lines[1..]
            .iter()
            .map(|v| (v["seed"].as_u64().unwrap(), v["r"].as_u64().unwrap()))
            .collect();
        (header, keys)
    };
    let (h1, k1) = keys("colrel.jsonl");
    let (h2, k2) = keys("fedavg_blind_dropout.jsonl");
    assert_eq!(k1, k2);
    assert_eq!(k1.len(), 3 * 30);
    assert_eq!(h1["config"], h2["config"]);
    assert_eq!(h1["tool"], "colrel");
    assert!(h1["config"].as_str().unwrap().contains("seeds = [0, 1, 2]"));
    assert!(!h1["tool_version"].as_str().unwrap().is_empty());
}

#[test]
fn traces_are_byte_identical_across_runs_and_thread_counts() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), PAIRED);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_ok(&colrel(&["simulate", "--config", &cfg, "--out", a.to_str().unwrap(), "--jobs", "1"]));
    assert_ok(&colrel(&["simulate", "--config", &cfg, "--out", b.to_str().unwrap(), "--jobs", "4"]));
    for name in ["colrel.jsonl", "fedavg_blind_dropout.jsonl"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn seeds_flag_overrides_config() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), PAIRED);
    let out = tmp.path().join("o");
    assert_ok(&colrel(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap(), "--seeds", "2"]));
    let lines = jsonl(&out.join("colrel.jsonl"));
    assert_eq!(lines[0]["header"]["seeds"], serde_json::json!([0, 1]));
    assert_eq!(lines.len(), 1 + 2 * 30);
}

#[test]
fn bound_on_zero_variance_example() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[graph]\nn = 1\np = 1.0\n[objective]\nd = 3\nmu = 1.0\nL = 1.0\nsigma = 1.0\n[protocol]\nlocal_steps = 1\n[bound]\nrounds = [4, 8]\ninit_gap = 2.0\n",
    );
    let out = tmp.path().join("b");
    let res = colrel(&["bound", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_ok(&res);
    let doc: Value = serde_json::from_str(&fs::read_to_string(out.join("bound.json")).unwrap()).unwrap();
    let c = &doc["constants"];
    let e = std::f64::consts::E;
    assert_eq!(c["s"].as_f64().unwrap(), 0.0);
    assert_eq!(c["b"].as_f64().unwrap(), 0.0);
    assert_eq!(c["c1"].as_f64().unwrap(), 0.0);
    assert!((c["c2"].as_f64().unwrap() - 16.0 * e).abs() < 1e-12);
    assert!((c["c3"].as_f64().unwrap() - 256.0 * e).abs() < 1e-10);
    assert_eq!(c["r0"].as_f64().unwrap(), 4.0);
    // r = 4, T = 1: 5/25·2 + 16e·0 + 256e/25
    let b4 = doc["rows"][0]["bound"].as_f64().unwrap();
    assert!((b4 - (0.4 + 256.0 * e / 25.0)).abs() < 1e-12);
    assert!(String::from_utf8_lossy(&res.stdout).contains("r0 = 4"));
}

#[test]
fn bound_below_r0_is_an_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "[graph]\nn = 1\np = 1.0\n[bound]\nrounds = [1]\n");
    let res = colrel(&["bound", "--config", &cfg, "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).starts_with("error: class=analysis detail="));
}

#[test]
fn optimize_weights_writes_matrix_and_metadata() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "[graph]\nn = 10\np = 0.2\n");
    let out = tmp.path().join("w");
    assert_ok(&colrel(&["optimize-weights", "--config", &cfg, "--out", out.to_str().unwrap()]));
    let doc: Value = serde_json::from_str(&fs::read_to_string(out.join("weights.json")).unwrap()).unwrap();
    let rows = doc["weights"].as_array().unwrap();
    assert_eq!(rows.len(), 10);
    for row in rows {
        for v in row.as_array().unwrap() {
            assert!((v.as_f64().unwrap() - 0.5).abs() < 1e-9);
        }
    }
    assert_eq!(doc["metadata"]["n"], 10);
    assert!(doc["metadata"]["max_residual"].as_f64().unwrap() <= 1e-9);
    assert_eq!(doc["metadata"]["residuals"].as_array().unwrap().len(), 10);
    assert!(doc["config"].as_str().unwrap().contains("[optimizer]"));
}

#[test]
fn sweep_over_p_improves_blind_dropout() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"
[graph]
n = 10
topology = { kind = "fully_connected" }

[objective]
d = 5
heterogeneity = 1.0
sigma = 0.5

[protocol]
variants = ["fedavg_blind_dropout"]
local_steps = 4
rounds = 40
eta = { schedule = "constant", value = 0.02 }

[experiment]
seeds = 20

[sweep]
axis = "p"
values = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
"#,
    );
    let out = tmp.path().join("s");
    assert_ok(&colrel(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let means: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(6).unwrap().parse().unwrap()).collect();
    assert_eq!(means.len(), 9);
    assert!(means.windows(2).all(|w| w[1] < w[0]), "{means:?}");
    let dirs = fs::read_dir(&out).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
    assert_eq!(dirs, 9);
}

#[test]
fn summarize_reads_simulation_output() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), PAIRED);
    let out = tmp.path().join("t");
    assert_ok(&colrel(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]));
    let res = colrel(&["summarize", "--out", out.to_str().unwrap(), "--window", "5:29"]);
    assert_ok(&res);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 2 * 30);
    let slopes = fs::read_to_string(out.join("slopes.csv")).unwrap();
    assert!(slopes.lines().nth(1).unwrap().contains(",5,29,"));
}

#[test]
fn unknown_key_fails_with_single_line() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "[graph]\nn = 2\ntopologyy = { kind = \"edgeless\" }\n");
    let res = colrel(&["simulate", "--config", &cfg]);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: class=parse detail="), "{err}");
    assert!(err.contains("topologyy"));
}

#[test]
fn usage_errors() {
    let res = colrel(&["simulate"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).starts_with("error: class=usage"));
    let res = colrel(&["frobnicate"]);
    assert_eq!(res.status.code(), Some(2));
    assert_eq!(String::from_utf8_lossy(&res.stderr).lines().count(), 1);
}

#[test]
fn unreachable_client_is_a_weights_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "[graph]\nn = 3\ntopology = { kind = \"edgeless\" }\np = [0.5, 0.0, 0.5]\n");
    let res = colrel(&["optimize-weights", "--config", &cfg, "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).starts_with("error: class=weights"));
}
