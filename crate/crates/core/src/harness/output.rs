//! CSV layouts of a run directory. Floats are written with 17 significant
//! digits so every value reads back bit-exactly; line endings are LF.

use std::path::Path;

use super::config::RunSpec;
use crate::error::{Error, Result};
use crate::trainer::RunLog;

pub const RESULTS_FILE: &str = "results.csv";
pub const WEIGHTS_FILE: &str = "weights.csv";
pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const STAGES_FILE: &str = "stages.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Columns shared by every per-run file.
const KEY: [&str; 4] = ["method", "lr", "strength", "seed"];

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn key(spec: &RunSpec) -> Vec<String> {
    vec![
        spec.label.clone(),
        fmt_f64(spec.hyper.lr),
        fmt_f64(spec.strength),
        spec.seed.to_string(),
    ]
}

pub fn results_header(tasks: usize) -> Vec<String> {
    let mut h = vec!["stream".to_string()];
    h.extend(KEY.iter().map(|s| s.to_string()));
    h.extend(
        ["stage", "apa", "acf", "ps_active", "ps_total", "mu", "retained_k"]
            .iter()
            .map(|s| s.to_string()),
    );
    h.extend((1..=tasks).map(|t| format!("acc_{t}")));
    h
}

pub fn weights_header() -> Vec<String> {
    let mut h: Vec<String> = KEY.iter().map(|s| s.to_string()).collect();
    h.extend(["stage", "task", "psi", "eta", "v", "mu"].iter().map(|s| s.to_string()));
    h
}

pub fn convergence_header() -> Vec<String> {
    let mut h: Vec<String> = KEY.iter().map(|s| s.to_string()).collect();
    h.extend(
        ["stage", "epoch", "objective", "ce", "penalty"]
            .iter()
            .map(|s| s.to_string()),
    );
    h
}

pub fn stages_header() -> Vec<String> {
    let mut h: Vec<String> = KEY.iter().map(|s| s.to_string()).collect();
    h.extend(
        [
            "stage",
            "stored",
            "retained_k",
            "penalty_evaluations",
            "snapshots_touched",
            "steps",
            "snapshot_bytes",
            "eval_subset_bytes",
            "warnings",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    h
}

/// Rows of all four per-run tables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunTables {
    pub results: Vec<Vec<String>>,
    pub weights: Vec<Vec<String>>,
    pub convergence: Vec<Vec<String>>,
    pub stages: Vec<Vec<String>>,
}

pub fn run_tables(spec: &RunSpec, stream_kind: &str, tasks: usize, log: &RunLog) -> Result<RunTables> {
    let mut t = RunTables::default();
    for m in log.stage_metrics()? {
        let mut row = vec![stream_kind.to_string()];
        row.extend(key(spec));
        row.extend([
            m.stage.to_string(),
            fmt_f64(m.apa),
            fmt_f64(m.acf),
            fmt_f64(m.ps_active),
            fmt_f64(m.ps_total),
            fmt_opt(m.mu),
            m.retained_k.to_string(),
        ]);
        row.extend((0..tasks).map(|j| fmt_opt(m.accuracies.get(j).copied())));
        t.results.push(row);
    }
    for w in &log.weights {
        let mut row = key(spec);
        row.extend([
            w.stage.to_string(),
            w.task.to_string(),
            fmt_f64(w.psi),
            fmt_f64(w.eta),
            fmt_f64(w.v),
            fmt_f64(w.mu),
        ]);
        t.weights.push(row);
    }
    for c in &log.convergence {
        let mut row = key(spec);
        row.extend([
            c.stage.to_string(),
            c.epoch.to_string(),
            fmt_f64(c.objective),
            fmt_f64(c.ce),
            fmt_f64(c.penalty),
        ]);
        t.convergence.push(row);
    }
    for s in &log.stages {
        let mut row = key(spec);
        row.extend([
            s.stage.to_string(),
            s.stored.to_string(),
            s.retained_k.to_string(),
            s.penalty.evaluations.to_string(),
            s.penalty.snapshots_touched.to_string(),
            s.steps.to_string(),
            s.snapshot_bytes.to_string(),
            s.eval_subset_bytes.to_string(),
            s.warnings.join("; "),
        ]);
        t.stages.push(row);
    }
    Ok(t)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: format!("{other:?}"),
        },
    }
}

/// Writes `header` and `rows` to `path`.
pub fn write_csv<'a, I>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = &'a Vec<String>>,
{
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV file with a header into (header, rows).
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let rows = r
        .records()
        .map(|rec| {
            rec.map(|rec| rec.iter().map(str::to_string).collect())
                .map_err(|e| csv_err(path, e))
        })
        .collect::<Result<Vec<Vec<String>>>>()?;
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, 2.0f64.sqrt(), 1e-300, 123456.789, 0.0, -5e10] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(0.5), "5.0000000000000000e-1");
    }

    #[test]
    fn csv_is_lf_terminated() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        let rows = vec![vec!["1".to_string(), "a,b".to_string()]];
        write_csv(&p, &["x".to_string(), "y".to_string()], &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "x,y\n1,\"a,b\"\n");
        let (h, r) = read_csv(&p).unwrap();
        assert_eq!(h, vec!["x", "y"]);
        assert_eq!(r, rows);
    }
}
