use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn ichaos(dir: &Path, args: &[&str], config: &str) -> Output {
    let cfg = dir.join("run.cfg");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_ichaos"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .env_remove("ICHAOS_THREADS")
        .output()
        .unwrap()
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn sample_field_is_reproducible_byte_for_byte() {
    let t = TempDir::new().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    for d in [&a, &b] {
        let o = ichaos(t.path(), &["sample-field", "--seed", "7", "--out", d.to_str().unwrap()], "grid = 64\n");
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["field.iclf", "chaos.iccf"] {
        let x = fs::read(a.join(f)).unwrap();
        assert_eq!(x, fs::read(b.join(f)).unwrap());
        assert!(x.len() > 64 * 64 * 8);
    }
    let o = ichaos(t.path(), &["sample-field", "--seed", "8", "--out", b.to_str().unwrap()], "grid = 64\n");
    assert!(o.status.success());
    assert_ne!(fs::read(a.join("chaos.iccf")).unwrap(), fs::read(b.join("chaos.iccf")).unwrap());
}

#[test]
fn beta_zero_moments_are_lebesgue() {
    let t = TempDir::new().unwrap();
    let out = t.path().join("m");
    let o = ichaos(t.path(), &["moments", "--out", out.to_str().unwrap()], "beta = 0\nradii = 0.05, 0.1, 0.2\n");
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("moments.csv")).unwrap();
    let vals: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(4).unwrap().parse().unwrap()).collect();
    for (v, r) in vals.iter().zip([0.05f64, 0.1, 0.2]) {
        assert!((v - (2.0 * r).powi(4)).abs() < 1e-12 * v);
    }
    let rep = report(&out);
    assert_eq!(rep["campaign"], "moments");
    assert_eq!(rep["passed"], true);
    assert_eq!(rep["config"]["beta"], "0.0");
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let t = TempDir::new().unwrap();
    let cfg = "beta = 1\nreplicas = 12\nshard_size = 5\nn_pts = 20000\n";
    let mut files = Vec::new();
    for n in ["1", "8"] {
        let out = t.path().join(n);
        let o = ichaos(t.path(), &["moments", "--threads", n, "--out", out.to_str().unwrap()], cfg);
        assert!(o.status.code().is_some_and(|c| c != 1), "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(report(&out)["threads"], n.parse::<u64>().unwrap());
        files.push((fs::read(out.join("moments.csv")).unwrap(), fs::read(out.join("shards/shard-00001.json")).unwrap()));
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn resume_reuses_intact_shards_and_redoes_corrupt_ones() {
    let t = TempDir::new().unwrap();
    let out = t.path().join("s");
    let o_str = out.to_str().unwrap();
    let cfg = "replicas = 3\nshard_size = 1\ndepth = 6\nshort_depth = 4\nprobes = 4\n";
    assert!(ichaos(t.path(), &["scaling", "--out", o_str], cfg).status.code().is_some_and(|c| c != 1));
    let slopes = fs::read(out.join("slopes.csv")).unwrap();
    let shards = out.join("shards");
    let manifest = fs::read(shards.join("manifest.json")).unwrap();

    // a readable but unhashed edit must be detected and recomputed
    let s1 = shards.join("shard-00001.json");
    let text = fs::read_to_string(&s1).unwrap().replacen('1', "2", 1);
    fs::write(&s1, text).unwrap();
    fs::remove_file(shards.join("shard-00002.json")).unwrap();
    assert!(ichaos(t.path(), &["scaling", "--resume", "--out", o_str], cfg).status.code().is_some_and(|c| c != 1));
    assert_eq!(fs::read(out.join("slopes.csv")).unwrap(), slopes);
    assert_eq!(fs::read(shards.join("manifest.json")).unwrap(), manifest);

    // a different configuration invalidates every shard
    let cfg2 = cfg.replace("probes = 4", "probes = 5");
    assert!(ichaos(t.path(), &["scaling", "--resume", "--out", o_str], &cfg2).status.code().is_some_and(|c| c != 1));
    assert_ne!(fs::read(out.join("slopes.csv")).unwrap(), slopes);
}

#[test]
fn config_errors_exit_one_and_name_every_field() {
    let t = TempDir::new().unwrap();
    let o = ichaos(t.path(), &["whitenoise"], "beta = 3\nreplicas = 1\n");
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("beta") && err.contains("replicas"), "{err}");

    let o = ichaos(t.path(), &["moments"], "beta = one\nbogus = 2\n");
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 1") && err.contains("line 2"), "{err}");

    let o = ichaos(t.path(), &["tail"], "experiment = moments\n");
    assert_eq!(o.status.code(), Some(1));
    let o = ichaos(t.path(), &["nonsense"], "");
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn scaling_report_carries_checks_and_seed_ledger() {
    let t = TempDir::new().unwrap();
    let out = t.path().join("s");
    let o = ichaos(t.path(), &["scaling", "--seed", "11", "--out", out.to_str().unwrap()], "replicas = 2\ndepth = 6\nshort_depth = 4\nprobes = 4\n");
    let code = o.status.code().unwrap();
    assert!(code == 0 || code == 2);
    let rep = report(&out);
    assert_eq!(rep["passed"], code == 0);
    assert_eq!(rep["seeds"]["master_seed"], 11);
    assert_eq!(rep["seeds"]["units"], 2);
    let checks = rep["checks"].as_array().unwrap();
    assert!(checks.iter().any(|c| c["name"] == "median_local_exponent" && c["module"] == "scaling-analyzer"));
    assert_eq!(rep["summary"]["probes"], 4);
    let slopes = fs::read_to_string(out.join("slopes.csv")).unwrap();
    assert_eq!(slopes.lines().count(), 1 + 2 * 4);
}
