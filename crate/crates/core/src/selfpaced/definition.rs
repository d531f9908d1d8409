//! Numeric checks that a regularizer kind behaves as a self-paced
//! regularizer: convex in each weight, weight nonincreasing in difficulty and
//! nondecreasing in age, with the four boundary limits.

use std::fmt;

use super::{regularizer_value, variant_weight, RegularizerKind};
use crate::error::{Error, Result};
use crate::numeric::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Definition1Config {
    /// Random (μ, other-coordinate) draws for the convexity sweep.
    pub trials: usize,
    /// Points per axis of the (η, μ) monotonicity grid.
    pub grid: usize,
    /// Upper end of both grid axes; the grid starts at `grid_max / grid`.
    pub grid_max: f64,
    /// Number of weights in the convexity sweep.
    pub dims: usize,
    /// Second-difference points per coordinate on [0, 1].
    pub convexity_points: usize,
    pub convexity_tol: f64,
    pub monotonicity_tol: f64,
    pub seed: u64,
}

impl Default for Definition1Config {
    fn default() -> Self {
        Definition1Config {
            trials: 100,
            grid: 1000,
            grid_max: 5.0,
            dims: 4,
            convexity_points: 200,
            convexity_tol: 1e-9,
            monotonicity_tol: 1e-12,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionResult {
    pub name: &'static str,
    pub passed: bool,
    /// Worst violation seen (0 when none).
    pub worst: f64,
    /// Point of the worst violation, when one exists.
    pub witness: Option<String>,
}

impl fmt::Display for ConditionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {}", self.name)?;
        if let Some(w) = &self.witness {
            write!(f, " (worst {:.3e} at {w})", self.worst)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Definition1Report {
    pub kind: RegularizerKind,
    pub conditions: Vec<ConditionResult>,
}

impl Definition1Report {
    pub fn passed(&self) -> bool {
        self.conditions.iter().all(|c| c.passed)
    }

    pub fn condition(&self, name: &str) -> Option<&ConditionResult> {
        self.conditions.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ConditionResult> {
        self.conditions.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for Definition1Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.conditions {
            writeln!(f, "[{}] {c}", self.kind.name())?;
        }
        Ok(())
    }
}

pub const CONVEXITY: &str = "convexity";
pub const ETA_MONOTONE: &str = "eta_monotonicity";
pub const MU_MONOTONE: &str = "mu_monotonicity";
pub const LIMIT_ETA_ZERO: &str = "limit_eta_to_0";
pub const LIMIT_ETA_INF: &str = "limit_eta_to_inf";
pub const LIMIT_MU_ZERO: &str = "limit_mu_to_0";
pub const LIMIT_MU_INF: &str = "limit_mu_to_inf";

/// Tracks the largest violation of a condition.
struct Tracker {
    name: &'static str,
    tol: f64,
    worst: f64,
    witness: Option<String>,
}

impl Tracker {
    fn new(name: &'static str, tol: f64) -> Self {
        Tracker {
            name,
            tol,
            worst: 0.0,
            witness: None,
        }
    }

    /// Records `violation` (positive = bad); the witness closure runs only
    /// for a new worst value.
    fn observe(&mut self, violation: f64, witness: impl FnOnce() -> String) {
        if violation > self.tol && violation > self.worst || violation.is_nan() {
            self.worst = violation;
            self.witness = Some(witness());
        }
    }

    fn finish(self) -> ConditionResult {
        ConditionResult {
            name: self.name,
            passed: self.witness.is_none(),
            worst: self.worst,
            witness: self.witness,
        }
    }
}

/// Default-configured check with the given number of random draws.
pub fn definition1_check(kind: RegularizerKind, trials: usize) -> Result<Definition1Report> {
    definition1_check_with(
        kind,
        &Definition1Config {
            trials,
            ..Definition1Config::default()
        },
    )
}

pub fn definition1_check_with(
    kind: RegularizerKind,
    cfg: &Definition1Config,
) -> Result<Definition1Report> {
    if cfg.trials == 0 || cfg.grid < 2 || cfg.dims == 0 || cfg.convexity_points < 2 {
        return Err(Error::usage(
            "definition check needs trials >= 1, grid >= 2, dims >= 1 and convexity_points >= 2",
        ));
    }
    if !(cfg.grid_max > 0.0) {
        return Err(Error::usage("definition check grid_max must be positive"));
    }
    let conditions = vec![
        convexity(kind, cfg)?,
        eta_monotonicity(kind, cfg)?,
        mu_monotonicity(kind, cfg)?,
        limit(LIMIT_ETA_ZERO, kind, cfg, |mu| (0.0, mu), |v| (v - 1.0).abs())?,
        limit(LIMIT_ETA_INF, kind, cfg, |mu| (1e9, mu), |v| v)?,
        limit(LIMIT_MU_ZERO, kind, cfg, |eta| (eta, 1e-12), |v| v)?,
        limit(LIMIT_MU_INF, kind, cfg, |eta| (eta, 1e12), |v| v - 1.0)?,
    ];
    Ok(Definition1Report { kind, conditions })
}

fn grid_point(cfg: &Definition1Config, i: usize) -> f64 {
    cfg.grid_max * (i + 1) as f64 / cfg.grid as f64
}

fn convexity(kind: RegularizerKind, cfg: &Definition1Config) -> Result<ConditionResult> {
    let mut rng = Rng::seed_from(cfg.seed);
    let mut tracker = Tracker::new(CONVEXITY, cfg.convexity_tol);
    let h = 1.0 / cfg.convexity_points as f64;
    let mut v = vec![0.0; cfg.dims];
    for _ in 0..cfg.trials {
        let mu = cfg.grid_max * (1.0 - rng.uniform());
        v.iter_mut().for_each(|x| *x = rng.uniform());
        for t in 0..cfg.dims {
            let keep = v[t];
            let at = |x: f64, v: &mut Vec<f64>| -> Result<f64> {
                v[t] = x;
                regularizer_value(v, kind, mu)
            };
            for i in 1..cfg.convexity_points {
                let x = i as f64 * h;
                let second =
                    at(x - h, &mut v)? + at((x + h).min(1.0), &mut v)? - 2.0 * at(x, &mut v)?;
                tracker.observe(-second, || format!("mu={mu}, v[{t}]={x}"));
            }
            v[t] = keep;
        }
    }
    Ok(tracker.finish())
}

fn eta_monotonicity(kind: RegularizerKind, cfg: &Definition1Config) -> Result<ConditionResult> {
    let mut tracker = Tracker::new(ETA_MONOTONE, cfg.monotonicity_tol);
    for j in 0..cfg.grid {
        let mu = grid_point(cfg, j);
        let mut prev = variant_weight(grid_point(cfg, 0), mu, kind)?;
        for i in 1..cfg.grid {
            let eta = grid_point(cfg, i);
            let v = variant_weight(eta, mu, kind)?;
            tracker.observe(v - prev, || format!("eta={eta}, mu={mu}"));
            prev = v;
        }
    }
    Ok(tracker.finish())
}

fn mu_monotonicity(kind: RegularizerKind, cfg: &Definition1Config) -> Result<ConditionResult> {
    let mut tracker = Tracker::new(MU_MONOTONE, cfg.monotonicity_tol);
    for i in 0..cfg.grid {
        let eta = grid_point(cfg, i);
        let mut prev = variant_weight(eta, grid_point(cfg, 0), kind)?;
        for j in 1..cfg.grid {
            let mu = grid_point(cfg, j);
            let v = variant_weight(eta, mu, kind)?;
            tracker.observe(prev - v, || format!("eta={eta}, mu={mu}"));
            prev = v;
        }
    }
    Ok(tracker.finish())
}

/// Evaluates the weight at `point(x)` for every grid value `x`; `violation`
/// maps the weight to a quantity that must not exceed the tolerance.
fn limit(
    name: &'static str,
    kind: RegularizerKind,
    cfg: &Definition1Config,
    point: impl Fn(f64) -> (f64, f64),
    violation: impl Fn(f64) -> f64,
) -> Result<ConditionResult> {
    let mut tracker = Tracker::new(name, cfg.monotonicity_tol);
    for i in 0..cfg.grid {
        let (eta, mu) = point(grid_point(cfg, i));
        let v = variant_weight(eta, mu, kind)?;
        tracker.observe(violation(v), || format!("eta={eta}, mu={mu}, v={v}"));
    }
    Ok(tracker.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Definition1Config {
        Definition1Config {
            trials: 10,
            grid: 100,
            ..Definition1Config::default()
        }
    }

    #[test]
    fn proposed_hard_linear_pass_small_grid() {
        for kind in [RegularizerKind::Proposed, RegularizerKind::Hard, RegularizerKind::Linear] {
            let report = definition1_check_with(kind, &small()).unwrap();
            assert!(report.passed(), "{report}");
            assert_eq!(report.conditions.len(), 7);
        }
    }

    #[test]
    fn logarithmic_weight_is_not_monotone_in_mu() {
        // ln(0.2)/ln(0.1) at mu = 0.9 exceeds ln(0.15)/ln(0.05) at mu = 0.95
        let report = definition1_check_with(RegularizerKind::Logarithmic, &small()).unwrap();
        let failed: Vec<_> = report.failures().map(|c| c.name).collect();
        assert_eq!(failed, vec![MU_MONOTONE]);
        let hi = variant_weight(0.1, 0.95, RegularizerKind::Logarithmic).unwrap();
        let lo = variant_weight(0.1, 0.9, RegularizerKind::Logarithmic).unwrap();
        assert!(lo > hi);
    }

    #[test]
    fn tracker_reports_witness() {
        let mut t = Tracker::new("x", 1e-9);
        t.observe(1e-12, || "tiny".into());
        t.observe(0.5, || "a".into());
        t.observe(0.1, || "b".into());
        let r = t.finish();
        assert!(!r.passed);
        assert_eq!(r.witness.as_deref(), Some("a"));
        assert_eq!(r.worst, 0.5);
        assert!(r.to_string().starts_with("FAIL x"));
    }

    #[test]
    fn rejects_empty_config() {
        let cfg = Definition1Config {
            trials: 0,
            ..small()
        };
        assert!(definition1_check_with(RegularizerKind::Proposed, &cfg).is_err());
    }
}
