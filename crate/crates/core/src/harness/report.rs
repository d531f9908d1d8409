use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::output::{
    fmt_f64, read_csv, write_csv, CONVERGENCE_FILE, MANIFEST_FILE, RESULTS_FILE, STAGES_FILE,
    WEIGHTS_FILE,
};
use crate::error::{Error, Result};
use crate::metrics::stream_averages;

/// Relative rise allowed between consecutive epoch objectives.
pub const CONVERGENCE_BAND: f64 = 0.02;
/// Trailing epochs of each task inspected by the convergence check.
pub const CONVERGENCE_WINDOW: usize = 5;

/// One parsed row of `results.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub stream: String,
    pub method: String,
    pub lr: f64,
    pub strength: f64,
    pub seed: u64,
    pub stage: usize,
    pub apa: f64,
    pub acf: f64,
    pub ps_active: f64,
    pub ps_total: f64,
    pub mu: Option<f64>,
    pub retained_k: usize,
    pub accuracies: Vec<Option<f64>>,
}

/// A grid point: (method, lr, strength).
pub type GridKey = (String, u64, u64);

fn grid_key(method: &str, lr: f64, strength: f64) -> GridKey {
    (method.to_string(), lr.to_bits(), strength.to_bits())
}

fn parse<T: std::str::FromStr>(path: &Path, line: usize, col: &str, s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Format {
        path: path.to_path_buf(),
        offset: 0,
        message: format!("row {line}, column {col}: cannot parse `{s}`"),
    })
}

fn column(path: &Path, header: &[String], name: &str) -> Result<usize> {
    header.iter().position(|h| h == name).ok_or_else(|| Error::Format {
        path: path.to_path_buf(),
        offset: 0,
        message: format!("missing column `{name}`"),
    })
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let (header, rows) = read_csv(path)?;
    let names = [
        "stream", "method", "lr", "strength", "seed", "stage", "apa", "acf", "ps_active",
        "ps_total", "mu", "retained_k",
    ];
    let idx = names
        .iter()
        .map(|n| column(path, &header, n))
        .collect::<Result<Vec<_>>>()?;
    let acc_cols: Vec<usize> = (0..header.len())
        .filter(|&i| header[i].starts_with("acc_"))
        .collect();
    rows.iter()
        .enumerate()
        .map(|(line, r)| {
            let f = |k: usize| r[idx[k]].as_str();
            let num = |k: usize| parse::<f64>(path, line + 2, names[k], f(k));
            Ok(ResultRow {
                stream: f(0).to_string(),
                method: f(1).to_string(),
                lr: num(2)?,
                strength: num(3)?,
                seed: parse(path, line + 2, "seed", f(4))?,
                stage: parse(path, line + 2, "stage", f(5))?,
                apa: num(6)?,
                acf: num(7)?,
                ps_active: num(8)?,
                ps_total: num(9)?,
                mu: if f(10).is_empty() { None } else { Some(num(10)?) },
                retained_k: parse(path, line + 2, "retained_k", f(11))?,
                accuracies: acc_cols
                    .iter()
                    .map(|&c| {
                        if r[c].is_empty() {
                            Ok(None)
                        } else {
                            parse(path, line + 2, &header[c], &r[c]).map(Some)
                        }
                    })
                    .collect::<Result<Vec<_>>>()?,
            })
        })
        .collect()
}

/// Chosen grid point of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub method: String,
    pub lr: f64,
    pub strength: f64,
    /// Final-stage APA averaged over seeds.
    pub final_apa: f64,
    pub seeds: usize,
}

/// Per method, the grid point with the highest seed-averaged final-stage
/// APA; ties go to the smaller strength, then the smaller learning rate.
pub fn grid_select(rows: &[ResultRow]) -> Result<BTreeMap<String, Selection>> {
    if rows.is_empty() {
        return Err(Error::usage("grid selection over no results"));
    }
    // final stage of each run
    let mut finals: BTreeMap<(GridKey, u64), &ResultRow> = BTreeMap::new();
    for r in rows {
        let k = (grid_key(&r.method, r.lr, r.strength), r.seed);
        match finals.get(&k) {
            Some(prev) if prev.stage >= r.stage => {}
            _ => {
                finals.insert(k, r);
            }
        }
    }
    let mut points: BTreeMap<GridKey, Vec<&ResultRow>> = BTreeMap::new();
    for ((k, _), r) in finals {
        points.entry(k).or_default().push(r);
    }
    let mut best: BTreeMap<String, Selection> = BTreeMap::new();
    for ((method, _, _), runs) in points {
        let cand = Selection {
            method: method.clone(),
            lr: runs[0].lr,
            strength: runs[0].strength,
            final_apa: runs.iter().map(|r| r.apa).sum::<f64>() / runs.len() as f64,
            seeds: runs.len(),
        };
        let better = match best.get(&method) {
            None => true,
            Some(b) => {
                cand.final_apa > b.final_apa
                    || cand.final_apa == b.final_apa
                        && (cand.strength < b.strength
                            || cand.strength == b.strength && cand.lr < b.lr)
            }
        };
        if better {
            best.insert(method, cand);
        }
    }
    Ok(best)
}

/// Seed-averaged metrics of one method at its selected grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub selection: Selection,
    /// Mean over seeds of each run's average APA over stages.
    pub average_apa: f64,
    pub average_acf: f64,
    /// Per-seed average APA, ordered by seed.
    pub per_seed_average_apa: Vec<(u64, f64)>,
    /// Per stage: (stage, apa, acf, ps_active, ps_total), seed means.
    pub stages: Vec<(usize, f64, f64, f64, f64)>,
}

/// One task's convergence verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceCheck {
    pub method: String,
    pub lr: f64,
    pub strength: f64,
    pub seed: u64,
    pub stage: usize,
    pub epochs_checked: usize,
    /// Largest relative rise between consecutive checked epochs.
    pub max_rise: f64,
    pub passed: bool,
}

/// Checks that the trailing `window` epoch objectives never rise by more
/// than `band` relative to the preceding epoch.
pub fn convergence_ok(objectives: &[f64], window: usize, band: f64) -> (f64, bool) {
    let start = objectives.len().saturating_sub(window);
    let tail = &objectives[start..];
    let max_rise = tail
        .windows(2)
        .map(|w| (w[1] - w[0]) / w[0].abs().max(f64::MIN_POSITIVE))
        .fold(f64::NEG_INFINITY, f64::max);
    let max_rise = if tail.len() < 2 { 0.0 } else { max_rise };
    (max_rise, max_rise <= band)
}

#[derive(Debug, Clone)]
pub struct Report {
    pub text: String,
    pub selections: BTreeMap<String, Selection>,
    pub summaries: BTreeMap<String, MethodSummary>,
    pub convergence: Vec<ConvergenceCheck>,
}

impl Report {
    pub fn convergence_passed(&self) -> bool {
        self.convergence.iter().all(|c| c.passed)
    }
}

fn summarize(rows: &[ResultRow], sel: &Selection) -> Result<MethodSummary> {
    let mine: Vec<&ResultRow> = rows
        .iter()
        .filter(|r| r.method == sel.method && r.lr == sel.lr && r.strength == sel.strength)
        .collect();
    let mut by_seed: BTreeMap<u64, Vec<&ResultRow>> = BTreeMap::new();
    for r in &mine {
        by_seed.entry(r.seed).or_default().push(r);
    }
    let mut per_seed_average_apa = Vec::new();
    let mut acfs = Vec::new();
    for (&seed, runs) in &by_seed {
        let apa: Vec<f64> = runs.iter().map(|r| r.apa).collect();
        let acf: Vec<f64> = runs.iter().map(|r| r.acf).collect();
        per_seed_average_apa.push((seed, stream_averages(&apa)?));
        acfs.push(stream_averages(&acf)?);
    }
    let mut by_stage: BTreeMap<usize, Vec<&ResultRow>> = BTreeMap::new();
    for r in &mine {
        by_stage.entry(r.stage).or_default().push(r);
    }
    let mean = |xs: &[&ResultRow], f: fn(&ResultRow) -> f64| {
        xs.iter().map(|r| f(r)).sum::<f64>() / xs.len() as f64
    };
    let stages = by_stage
        .iter()
        .map(|(&s, rs)| {
            (
                s,
                mean(rs, |r| r.apa),
                mean(rs, |r| r.acf),
                mean(rs, |r| r.ps_active),
                mean(rs, |r| r.ps_total),
            )
        })
        .collect();
    let seed_apas: Vec<f64> = per_seed_average_apa.iter().map(|p| p.1).collect();
    Ok(MethodSummary {
        selection: sel.clone(),
        average_apa: stream_averages(&seed_apas)?,
        average_acf: stream_averages(&acfs)?,
        per_seed_average_apa,
        stages,
    })
}

fn convergence_checks(path: &Path) -> Result<Vec<ConvergenceCheck>> {
    let (header, rows) = read_csv(path)?;
    let c = |n: &str| column(path, &header, n);
    let (cm, cl, cs, cseed, cst, cep, cobj) = (
        c("method")?,
        c("lr")?,
        c("strength")?,
        c("seed")?,
        c("stage")?,
        c("epoch")?,
        c("objective")?,
    );
    type Key = (String, u64, u64, u64, usize);
    let mut series: BTreeMap<Key, Vec<(usize, f64)>> = BTreeMap::new();
    for (line, r) in rows.iter().enumerate() {
        let lr: f64 = parse(path, line + 2, "lr", &r[cl])?;
        let s: f64 = parse(path, line + 2, "strength", &r[cs])?;
        let key = (
            r[cm].clone(),
            lr.to_bits(),
            s.to_bits(),
            parse(path, line + 2, "seed", &r[cseed])?,
            parse(path, line + 2, "stage", &r[cst])?,
        );
        let epoch = parse(path, line + 2, "epoch", &r[cep])?;
        let obj = parse(path, line + 2, "objective", &r[cobj])?;
        series.entry(key).or_default().push((epoch, obj));
    }
    Ok(series
        .into_iter()
        .map(|((method, lr, s, seed, stage), mut pts)| {
            pts.sort_by_key(|p| p.0);
            let objs: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let (max_rise, passed) = convergence_ok(&objs, CONVERGENCE_WINDOW, CONVERGENCE_BAND);
            ConvergenceCheck {
                method,
                lr: f64::from_bits(lr),
                strength: f64::from_bits(s),
                seed,
                stage,
                epochs_checked: objs.len().min(CONVERGENCE_WINDOW),
                max_rise,
                passed,
            }
        })
        .collect())
}

/// Reads a run directory, writes `report_*.csv` next to it and returns the
/// summary.
pub fn report(dir: &Path) -> Result<Report> {
    let required = [RESULTS_FILE, WEIGHTS_FILE, CONVERGENCE_FILE];
    let missing: Vec<&str> = required
        .iter()
        .copied()
        .filter(|f| !dir.join(f).is_file())
        .collect();
    if !missing.is_empty() {
        return Err(Error::usage(format!(
            "{} is missing {}; a run directory holds {}, {}, {}, {} and {}",
            dir.display(),
            missing.join(", "),
            RESULTS_FILE,
            WEIGHTS_FILE,
            CONVERGENCE_FILE,
            STAGES_FILE,
            MANIFEST_FILE
        )));
    }
    let rows = read_results(&dir.join(RESULTS_FILE))?;
    let selections = grid_select(&rows)?;
    let mut summaries = BTreeMap::new();
    for (m, sel) in &selections {
        summaries.insert(m.clone(), summarize(&rows, sel)?);
    }
    let convergence = convergence_checks(&dir.join(CONVERGENCE_FILE))?;

    let mut text = String::new();
    let _ = writeln!(text, "selected grid points (final-stage APA, mean over seeds):");
    for s in selections.values() {
        let _ = writeln!(
            text,
            "  {:<14} lr={:<8} strength={:<8} final_apa={:.4} seeds={}",
            s.method, s.lr, s.strength, s.final_apa, s.seeds
        );
    }
    let _ = writeln!(text, "\nstream averages:");
    let _ = writeln!(text, "  {:<14} {:>11} {:>11}  per-seed average APA", "method", "avg_apa", "avg_acf");
    for m in summaries.values() {
        let seeds: Vec<String> = m
            .per_seed_average_apa
            .iter()
            .map(|(s, a)| format!("{s}:{a:.4}"))
            .collect();
        let _ = writeln!(
            text,
            "  {:<14} {:>11.4} {:>11.4}  {}",
            m.selection.method,
            m.average_apa,
            m.average_acf,
            seeds.join(" ")
        );
    }
    let _ = writeln!(text, "\nper-stage means (apa / acf / ps_active / ps_total):");
    for m in summaries.values() {
        let _ = writeln!(text, "  {}", m.selection.method);
        for (s, apa, acf, psa, pst) in &m.stages {
            let _ = writeln!(
                text,
                "    stage {s:>3}: {apa:.4} / {acf:+.4} / {psa:.4} / {pst:.4}"
            );
        }
    }
    let failed: Vec<&ConvergenceCheck> = convergence.iter().filter(|c| !c.passed).collect();
    let _ = writeln!(
        text,
        "\nconvergence (last {CONVERGENCE_WINDOW} epochs, band {:.0}%): {} of {} tasks {}",
        CONVERGENCE_BAND * 100.0,
        convergence.len() - failed.len(),
        convergence.len(),
        if failed.is_empty() { "PASS" } else { "pass; FAIL overall" }
    );
    for c in &failed {
        let _ = writeln!(
            text,
            "  FAIL {} lr={} strength={} seed={} stage={} rise={:.4}",
            c.method, c.lr, c.strength, c.seed, c.stage, c.max_rise
        );
    }

    let stage_rows: Vec<Vec<String>> = summaries
        .values()
        .flat_map(|m| {
            m.stages.iter().map(move |(s, apa, acf, psa, pst)| {
                vec![
                    m.selection.method.clone(),
                    s.to_string(),
                    fmt_f64(*apa),
                    fmt_f64(*acf),
                    fmt_f64(*psa),
                    fmt_f64(*pst),
                ]
            })
        })
        .collect();
    let h = |cols: &[&str]| cols.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    write_csv(
        &dir.join("report_stages.csv"),
        &h(&["method", "stage", "apa", "acf", "ps_active", "ps_total"]),
        &stage_rows,
    )?;
    let summary_rows: Vec<Vec<String>> = summaries
        .values()
        .map(|m| {
            vec![
                m.selection.method.clone(),
                fmt_f64(m.selection.lr),
                fmt_f64(m.selection.strength),
                fmt_f64(m.average_apa),
                fmt_f64(m.average_acf),
                fmt_f64(m.selection.final_apa),
                m.selection.seeds.to_string(),
            ]
        })
        .collect();
    write_csv(
        &dir.join("report_summary.csv"),
        &h(&["method", "lr", "strength", "average_apa", "average_acf", "final_apa", "seeds"]),
        &summary_rows,
    )?;
    let conv_rows: Vec<Vec<String>> = convergence
        .iter()
        .map(|c| {
            vec![
                c.method.clone(),
                fmt_f64(c.lr),
                fmt_f64(c.strength),
                c.seed.to_string(),
                c.stage.to_string(),
                c.epochs_checked.to_string(),
                fmt_f64(c.max_rise),
                c.passed.to_string(),
            ]
        })
        .collect();
    write_csv(
        &dir.join("report_convergence.csv"),
        &h(&["method", "lr", "strength", "seed", "stage", "epochs_checked", "max_rise", "passed"]),
        &conv_rows,
    )?;
    Ok(Report {
        text,
        selections,
        summaries,
        convergence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, lr: f64, strength: f64, seed: u64, stage: usize, apa: f64) -> ResultRow {
        ResultRow {
            stream: "synthetic".into(),
            method: method.into(),
            lr,
            strength,
            seed,
            stage,
            apa,
            acf: 0.0,
            ps_active: 1.0,
            ps_total: 1.0,
            mu: None,
            retained_k: 0,
            accuracies: vec![],
        }
    }

    #[test]
    fn single_point_is_selected() {
        let sel = grid_select(&[row("ewc", 0.1, 1.0, 0, 1, 0.3)]).unwrap();
        assert_eq!(sel["ewc"].lr, 0.1);
    }

    #[test]
    fn ties_prefer_smaller_strength_then_lr() {
        let rows = vec![
            row("ewc", 0.1, 10.0, 0, 1, 0.8),
            row("ewc", 0.1, 1.0, 0, 1, 0.8),
            row("ewc", 0.01, 1.0, 0, 1, 0.8),
        ];
        let sel = grid_select(&rows).unwrap();
        assert_eq!((sel["ewc"].strength, sel["ewc"].lr), (1.0, 0.01));
    }

    #[test]
    fn uses_final_stage_and_seed_mean() {
        let rows = vec![
            // final stage of (0.1, 1) averages 0.6 over seeds
            row("m", 0.1, 1.0, 0, 1, 0.99),
            row("m", 0.1, 1.0, 0, 2, 0.5),
            row("m", 0.1, 1.0, 1, 2, 0.7),
            row("m", 0.2, 1.0, 0, 2, 0.65),
            row("m", 0.2, 1.0, 1, 2, 0.65),
        ];
        let sel = grid_select(&rows).unwrap();
        assert_eq!(sel["m"].lr, 0.2);
        assert_eq!(sel["m"].seeds, 2);
        assert!(grid_select(&[]).is_err());
    }

    #[test]
    fn convergence_band() {
        assert!(convergence_ok(&[5.0, 3.0, 2.0, 1.0, 1.01, 1.0], 5, 0.02).1);
        assert!(!convergence_ok(&[5.0, 3.0, 2.0, 1.0, 1.05, 1.0], 5, 0.02).1);
        // rises before the window are ignored
        assert!(convergence_ok(&[1.0, 9.0, 3.0, 2.0, 1.0, 1.0], 5, 0.02).0 <= 0.0);
        assert!(convergence_ok(&[1.0], 5, 0.02).1);
    }

    #[test]
    fn empty_directory_lists_files() {
        let dir = tempfile::tempdir().unwrap();
        let msg = report(dir.path()).unwrap_err().to_string();
        for f in [RESULTS_FILE, WEIGHTS_FILE, CONVERGENCE_FILE] {
            assert!(msg.contains(f), "{msg}");
        }
    }
}
