use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, RunSpec};
use super::output::{
    convergence_header, results_header, run_tables, stages_header, weights_header, write_csv,
    RunTables, CONVERGENCE_FILE, MANIFEST_FILE, RESULTS_FILE, STAGES_FILE, WEIGHTS_FILE,
};
use crate::error::{Error, Result};
use crate::stream::{build_stream, StreamSource, Task};
use crate::trainer::run_stream;

const FRAGMENT_DIR: &str = ".runs";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub name: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Platform {
    pub os: String,
    pub arch: String,
    pub family: String,
    pub pointer_width: usize,
    pub endian: String,
}

impl Platform {
    pub fn current() -> Self {
        Platform {
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            family: std::env::consts::FAMILY.to_string(),
            pointer_width: usize::BITS as usize,
            endian: if cfg!(target_endian = "little") { "little" } else { "big" }.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: String,
    pub method: String,
    pub lr: f64,
    pub strength: f64,
    pub seed: u64,
    pub status: String,
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Everything needed to repeat a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub artifact: Artifact,
    pub platform: Platform,
    /// `complete` or `partial`.
    pub status: String,
    pub runs: Vec<RunRecord>,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; 0 means one per available core.
    pub jobs: usize,
    pub seed_override: Option<Vec<u64>>,
    pub data_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub manifest: Manifest,
}

impl RunSummary {
    pub fn failures(&self) -> impl Iterator<Item = &RunRecord> {
        self.manifest.runs.iter().filter(|r| r.status != "ok")
    }
}

/// Reads either a config or a manifest (a JSON object with a `config`
/// key) and returns the config it describes.
pub fn load_run_input(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Config {
        path: String::new(),
        message: format!("{}: {e}", path.display()),
    })?;
    match value.get("config") {
        Some(inner) if value.get("artifact").is_some() => {
            ExperimentConfig::from_json(&inner.to_string()).map_err(|e| match e {
                Error::Config { path, message } => Error::Config {
                    path: format!("config.{path}"),
                    message,
                },
                other => other,
            })
        }
        _ => ExperimentConfig::from_json(&text),
    }
}

/// Applies options, resolves paths and validates; the returned config is
/// what the manifest records.
pub fn prepare(mut config: ExperimentConfig, options: &RunOptions) -> Result<ExperimentConfig> {
    if let Some(seeds) = &options.seed_override {
        config.seeds = seeds.clone();
    }
    if let Some(dir) = &options.output_dir {
        config.output_dir = dir.clone();
    }
    config.resolve_paths(options.data_dir.as_deref())?;
    config.validate()?;
    Ok(config)
}

fn stream_kind(config: &ExperimentConfig) -> &'static str {
    match config.stream.source {
        StreamSource::Permuted { .. } => "permuted",
        StreamSource::Split { .. } => "split",
        StreamSource::Synthetic { .. } => "synthetic",
    }
}

fn write_tables(dir: &Path, stem: &str, tasks: usize, t: &RunTables) -> Result<()> {
    write_csv(&dir.join(format!("{stem}.{RESULTS_FILE}")), &results_header(tasks), &t.results)?;
    write_csv(&dir.join(format!("{stem}.{WEIGHTS_FILE}")), &weights_header(), &t.weights)?;
    write_csv(
        &dir.join(format!("{stem}.{CONVERGENCE_FILE}")),
        &convergence_header(),
        &t.convergence,
    )?;
    write_csv(&dir.join(format!("{stem}.{STAGES_FILE}")), &stages_header(), &t.stages)
}

fn execute_one(
    spec: &RunSpec,
    tasks: &[Task],
    kind: &str,
    fragments: &Path,
) -> Result<RunTables> {
    let (_, log) = run_stream(tasks, &spec.method, &spec.hyper, spec.seed)?;
    let tables = run_tables(spec, kind, tasks.len(), &log)?;
    write_tables(fragments, &spec.id(), tasks.len(), &tables)?;
    Ok(tables)
}

/// Runs the whole grid of a prepared config and writes the run directory.
/// Failed runs are recorded in the manifest and left out of the tables.
pub fn execute(config: ExperimentConfig, jobs: usize) -> Result<RunSummary> {
    let started = Instant::now();
    let out = config.output_dir.clone();
    std::fs::create_dir_all(&out)?;
    let fragments = out.join(FRAGMENT_DIR);
    std::fs::create_dir_all(&fragments)?;
    let tasks = build_stream(&config.stream, None)?;
    let kind = stream_kind(&config);
    let runs = config.runs();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::usage(format!("worker pool: {e}")))?;
    let done = AtomicUsize::new(0);
    let outcomes: Vec<(RunRecord, Option<RunTables>)> = pool.install(|| {
        runs.par_iter()
            .map(|spec| {
                let t0 = Instant::now();
                let result = execute_one(spec, &tasks, kind, &fragments);
                let seconds = t0.elapsed().as_secs_f64();
                let n = done.fetch_add(1, Ordering::Relaxed) + 1;
                let status = if result.is_ok() { "ok" } else { "failed" };
                eprintln!("[{n}/{}] {} {status} ({seconds:.1} s)", runs.len(), spec.id());
                let record = RunRecord {
                    id: spec.id(),
                    method: spec.label.clone(),
                    lr: spec.hyper.lr,
                    strength: spec.strength,
                    seed: spec.seed,
                    status: status.to_string(),
                    seconds,
                    error: result.as_ref().err().map(|e| e.to_string()),
                };
                (record, result.ok())
            })
            .collect()
    });

    let ok: Vec<&RunTables> = outcomes.iter().filter_map(|(_, t)| t.as_ref()).collect();
    write_csv(
        &out.join(RESULTS_FILE),
        &results_header(tasks.len()),
        ok.iter().flat_map(|t| &t.results),
    )?;
    write_csv(&out.join(WEIGHTS_FILE), &weights_header(), ok.iter().flat_map(|t| &t.weights))?;
    write_csv(
        &out.join(CONVERGENCE_FILE),
        &convergence_header(),
        ok.iter().flat_map(|t| &t.convergence),
    )?;
    write_csv(&out.join(STAGES_FILE), &stages_header(), ok.iter().flat_map(|t| &t.stages))?;

    let records: Vec<RunRecord> = outcomes.into_iter().map(|(r, _)| r).collect();
    let complete = records.iter().all(|r| r.status == "ok");
    if complete {
        std::fs::remove_dir_all(&fragments)?;
    }
    let manifest = Manifest {
        config,
        artifact: Artifact {
            name: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
        platform: Platform::current(),
        status: if complete { "complete" } else { "partial" }.to_string(),
        runs: records,
        total_seconds: started.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(out.join(MANIFEST_FILE), json + "\n")?;
    Ok(RunSummary {
        output_dir: out,
        manifest,
    })
}
