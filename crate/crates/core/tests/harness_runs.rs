//! End-to-end runs of the experiment harness and the `spwc` binary.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use spwc::harness::{
    execute, load_run_input, prepare, read_results, report, ExperimentConfig, RunOptions,
};
use spwc::metrics::{acf, apa, ps, stream_averages, AccuracyMatrix, StorageLedger};

fn synthetic_config(tasks: usize, methods: &str, seeds: &str, out: &Path) -> String {
    format!(
        r#"{{
  "stream": {{
    "source": {{"type": "synthetic", "classes": 3, "dim": 8, "variance": 0.3}},
    "tasks": {tasks}, "train": 120, "valid": 12, "test": 60, "eval_subset": 30, "seed": 5
  }},
  "methods": [{methods}],
  "seeds": [{seeds}],
  "hidden": [12],
  "epochs": 6,
  "batch_size": 16,
  "lr": [0.05],
  "lambda": [20],
  "gamma": [0.5],
  "mu_policy": "top_half",
  "output_dir": "{}"
}}"#,
        out.display()
    )
}

fn run(text: &str, jobs: usize) -> spwc::harness::RunSummary {
    let cfg = prepare(ExperimentConfig::from_json(text).unwrap(), &RunOptions::default()).unwrap();
    execute(cfg, jobs).unwrap()
}

#[test]
fn smoke_run_is_fast_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("smoke");
    let t0 = Instant::now();
    let summary = run(&synthetic_config(1, r#"{"method": "finetune"}"#, "0", &out), 1);
    assert!(t0.elapsed().as_secs_f64() < 10.0);
    assert_eq!(summary.manifest.status, "complete");
    for f in ["results.csv", "weights.csv", "convergence.csv", "stages.csv", "manifest.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    assert!(!out.join(".runs").exists());
    let rows = read_results(&out.join("results.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].stream, "synthetic");
}

#[test]
fn results_are_byte_deterministic_across_workers_and_manifest_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let methods = r#"{"method": "ewc"}, {"method": "sp_mas"}, {"method": "finetune"}"#;
    let a = dir.path().join("a");
    run(&synthetic_config(3, methods, "0, 1", &a), 1);
    let b = dir.path().join("b");
    run(&synthetic_config(3, methods, "0, 1", &b), 3);

    let cfg = load_run_input(&a.join("manifest.json")).unwrap();
    let c = dir.path().join("c");
    let opts = RunOptions {
        output_dir: Some(c.clone()),
        ..RunOptions::default()
    };
    execute(prepare(cfg, &opts).unwrap(), 2).unwrap();

    for f in ["results.csv", "weights.csv", "convergence.csv", "stages.csv"] {
        let bytes = std::fs::read(a.join(f)).unwrap();
        assert_eq!(bytes, std::fs::read(b.join(f)).unwrap(), "{f} differs across worker counts");
        assert_eq!(bytes, std::fs::read(c.join(f)).unwrap(), "{f} differs on manifest rerun");
        assert!(!bytes.contains(&b'\r'));
    }
}

#[test]
fn results_are_recomputable_from_raw_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let methods = r#"{"method": "ewc"}, {"method": "sp_ewc"}, {"method": "sp_mas", "mu_policy": {"topk": 1}}"#;
    run(&synthetic_config(4, methods, "3", &out), 1);
    let rows = read_results(&out.join("results.csv")).unwrap();

    // v and μ per (method, stage) from weights.csv
    let (header, wrows) = spwc::harness::output::read_csv(&out.join("weights.csv")).unwrap();
    let col = |n: &str| header.iter().position(|h| h == n).unwrap();
    let mut weights: BTreeMap<(String, usize), Vec<(f64, f64)>> = BTreeMap::new();
    for r in &wrows {
        let v: f64 = r[col("v")].parse().unwrap();
        let mu: f64 = r[col("mu")].parse().unwrap();
        let key = (r[col("method")].clone(), r[col("stage")].parse().unwrap());
        weights.entry(key).or_default().push((v, mu));
    }

    let params = 8 * 12 + 12 + 4 * (12 * 3 + 3);
    let block = 2 * params as u64;
    let mut by_method: BTreeMap<String, Vec<&spwc::harness::ResultRow>> = BTreeMap::new();
    for r in &rows {
        by_method.entry(r.method.clone()).or_default().push(r);
    }
    for (method, mut rs) in by_method {
        rs.sort_by_key(|r| r.stage);
        let matrix = AccuracyMatrix::from_rows(
            rs.iter().map(|r| r.accuracies.iter().flatten().copied().collect()).collect(),
        )
        .unwrap();
        let mut active = StorageLedger::new();
        let mut total = StorageLedger::new();
        for r in &rs {
            let m = r.stage;
            assert_eq!(r.apa, apa(&matrix, m).unwrap(), "{method} apa at {m}");
            assert_eq!(r.acf, acf(&matrix, m).unwrap(), "{method} acf at {m}");
            let w = weights.get(&(method.clone(), m)).cloned().unwrap_or_default();
            let retained = if method == "ewc" {
                m - 1
            } else {
                w.iter().filter(|p| p.0 > 0.0).count()
            };
            assert_eq!(r.retained_k, retained, "{method} retained at {m}");
            if method != "ewc" && m > 1 {
                assert_eq!(r.mu, Some(w[0].1));
            }
            active.push(block * (1 + retained as u64));
            total.push(block * m as u64);
            assert_eq!(r.ps_active, ps(&active, m).unwrap());
            assert_eq!(r.ps_total, ps(&total, m).unwrap());
        }
    }
}

#[test]
fn ewc_ps_follows_the_harmonic_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ewc");
    run(&synthetic_config(5, r#"{"method": "ewc"}"#, "0", &out), 1);
    let rows = read_results(&out.join("results.csv")).unwrap();
    let mut harmonic = 0.0;
    for r in &rows {
        harmonic += 1.0 / r.stage as f64;
        let expected = harmonic / r.stage as f64;
        assert!((r.ps_active - expected).abs() < 1e-15, "stage {}", r.stage);
        assert_eq!(r.ps_active, r.ps_total);
    }
    assert_eq!(rows.len(), 5);
}

#[test]
fn summary_apa_is_the_stream_average_of_results() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let text = synthetic_config(3, r#"{"method": "ewc", "lambda": [1, 50]}, {"method": "finetune"}"#, "0, 1", &out);
    run(&text, 2);
    let rep = report(&out).unwrap();
    let rows = read_results(&out.join("results.csv")).unwrap();
    for (method, summary) in &rep.summaries {
        let sel = &summary.selection;
        let mut per_seed: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for r in rows
            .iter()
            .filter(|r| &r.method == method && r.lr == sel.lr && r.strength == sel.strength)
        {
            per_seed.entry(r.seed).or_default().push(r.apa);
        }
        let seed_means: Vec<f64> =
            per_seed.values().map(|v| stream_averages(v).unwrap()).collect();
        assert_eq!(summary.average_apa, stream_averages(&seed_means).unwrap());
    }
    for f in ["report_stages.csv", "report_summary.csv", "report_convergence.csv"] {
        assert!(out.join(f).is_file());
    }
}

#[test]
fn report_on_empty_directory_lists_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    let msg = report(dir.path()).unwrap_err().to_string();
    for f in ["results.csv", "weights.csv", "convergence.csv"] {
        assert!(msg.contains(f), "{msg}");
    }
}

fn spwc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spwc"))
}

#[test]
fn cli_validate_only_does_not_train() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, synthetic_config(2, r#"{"method": "ewc"}"#, "0, 1", &out)).unwrap();
    let o = spwc().arg("run").arg(&cfg).arg("--validate-only").output().unwrap();
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("2 runs"));
    assert!(!out.exists());
}

#[test]
fn cli_rejects_bad_config_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    let text = synthetic_config(2, r#"{"method": "ewc", "lamda": [1]}"#, "0", dir.path());
    std::fs::write(&cfg, text).unwrap();
    let o = spwc().arg("run").arg(&cfg).arg("--validate-only").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("methods[0]"), "{err}");
}

#[test]
fn cli_check_passes() {
    let o = spwc().arg("check").output().unwrap();
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{text}");
    assert!(text.lines().any(|l| l.starts_with("PASS proposed convexity")));
}
