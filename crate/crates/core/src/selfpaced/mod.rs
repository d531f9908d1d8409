//! Task difficulty, self-paced regularizers and their closed-form priority
//! weights.
//!
//! A past task with accuracy ψ gets difficulty η = −ψ·ln(1−ψ). For the
//! proposed regularizer f(v) = ⅓‖v‖₂³ − Σ v_t, minimising
//! `v·η + μ·(⅓v³ − v)` over `v ∈ [0, 1]` gives `v* = sqrt(1 − η/μ)` when
//! η < μ and 0 otherwise. η grows with ψ, so tasks that are still well
//! remembered get small weights and forgotten tasks get large ones.

mod definition;

use serde::{Deserialize, Serialize};

pub use definition::{
    definition1_check, definition1_check_with, ConditionResult, Definition1Config,
    Definition1Report,
};

use crate::error::{Error, Result};

/// Accuracies are clamped to this value before the logarithm.
pub const PSI_CLAMP: f64 = 1.0 - 1e-12;

/// Floor for a resolved age parameter.
pub const MIN_MU: f64 = 1e-12;

/// Relative margin placing μ just above the k-th smallest difficulty.
pub const TOPK_MARGIN: f64 = 1e-9;

/// Task difficulty η ≥ 0.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Difficulty(f64);

impl Difficulty {
    pub fn eta(self) -> f64 {
        self.0
    }
}

/// η = −ψ·ln(1−ψ) with ψ clamped to [`PSI_CLAMP`]; natural logarithm.
pub fn difficulty(psi: f64) -> Result<Difficulty> {
    if !(0.0..=1.0).contains(&psi) {
        return Err(Error::usage(format!("accuracy {psi} outside [0, 1]")));
    }
    let psi = psi.min(PSI_CLAMP);
    Ok(Difficulty(-psi * (-psi).ln_1p()))
}

/// Closed-form minimiser of [`weight_objective`] over `v ∈ [0, 1]`.
pub fn proposed_weight(eta: f64, mu: f64) -> Result<f64> {
    if !(mu > 0.0) {
        return Err(Error::usage(format!("age parameter must be positive, got {mu}")));
    }
    if !(eta >= 0.0) {
        return Err(Error::usage(format!("difficulty must be nonnegative, got {eta}")));
    }
    Ok(if eta < mu {
        (1.0 - eta / mu).sqrt()
    } else {
        0.0
    })
}

/// `v·η + μ·(v³/3 − v)`, the per-task weight objective of the proposed
/// regularizer.
pub fn weight_objective(v: f64, eta: f64, mu: f64) -> f64 {
    v * eta + mu * (v * v * v / 3.0 - v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerKind {
    #[default]
    Proposed,
    Hard,
    Linear,
    Logarithmic,
}

impl RegularizerKind {
    pub const ALL: [RegularizerKind; 4] = [
        RegularizerKind::Proposed,
        RegularizerKind::Hard,
        RegularizerKind::Linear,
        RegularizerKind::Logarithmic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RegularizerKind::Proposed => "proposed",
            RegularizerKind::Hard => "hard",
            RegularizerKind::Linear => "linear",
            RegularizerKind::Logarithmic => "logarithmic",
        }
    }
}

/// True when the logarithmic kind cannot be used at this μ and falls back to
/// the linear kind (it needs ζ = 1 − μ ∈ (0, 1)).
pub fn logarithmic_falls_back(mu: f64) -> bool {
    !(mu > 0.0 && mu < 1.0)
}

fn validate_weights(v: &[f64]) -> Result<()> {
    match v.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        Some(x) => Err(Error::usage(format!("priority weight {x} outside [0, 1]"))),
        None => Ok(()),
    }
}

/// Value of the regularizer at `v`.
///
/// The proposed kind is returned without the age factor (the training
/// objective multiplies it by μ). The baseline kinds carry μ inside, as in
/// their usual self-paced forms:
///
/// - hard: `−μ Σ v`
/// - linear: `½ μ Σ (v² − 2v)`
/// - logarithmic: `Σ (ζ v − ζ^v / ln ζ)` with ζ = 1 − μ, linear outside
///   `0 < μ < 1`
///
/// With that convention every kind's weight is the minimiser over [0, 1] of
/// `v·η + g(v)`, where `g` is `μ·f` for the proposed kind and `f` otherwise.
pub fn regularizer_value(v: &[f64], kind: RegularizerKind, mu: f64) -> Result<f64> {
    validate_weights(v)?;
    let sum: f64 = v.iter().sum();
    Ok(match kind {
        RegularizerKind::Proposed => {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            norm.powi(3) / 3.0 - sum
        }
        RegularizerKind::Hard => -mu * sum,
        RegularizerKind::Logarithmic if !logarithmic_falls_back(mu) => {
            let zeta = 1.0 - mu;
            v.iter().map(|&x| zeta * x - zeta.powf(x) / zeta.ln()).sum()
        }
        RegularizerKind::Linear | RegularizerKind::Logarithmic => {
            0.5 * mu * v.iter().map(|x| x * x - 2.0 * x).sum::<f64>()
        }
    })
}

/// Closed-form weight of any regularizer kind.
pub fn variant_weight(eta: f64, mu: f64, kind: RegularizerKind) -> Result<f64> {
    if !(mu > 0.0) {
        return Err(Error::usage(format!("age parameter must be positive, got {mu}")));
    }
    if !(eta >= 0.0) {
        return Err(Error::usage(format!("difficulty must be nonnegative, got {eta}")));
    }
    Ok(match kind {
        RegularizerKind::Proposed => proposed_weight(eta, mu)?,
        RegularizerKind::Hard => {
            if eta < mu {
                1.0
            } else {
                0.0
            }
        }
        RegularizerKind::Logarithmic if !logarithmic_falls_back(mu) => {
            if eta < mu {
                let zeta = 1.0 - mu;
                ((eta + zeta).ln() / zeta.ln()).clamp(0.0, 1.0)
            } else {
                0.0
            }
        }
        RegularizerKind::Linear | RegularizerKind::Logarithmic => (1.0 - eta / mu).max(0.0),
    })
}

/// How the age parameter μ is chosen for each incoming task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AgePolicy {
    /// Constant μ.
    Fixed(f64),
    /// μ just above the k-th smallest difficulty; at most k tasks keep a
    /// positive weight.
    #[serde(rename = "topk")]
    TopK(usize),
    /// `TopK(ceil(n / 2))` for `n` past tasks.
    #[default]
    TopHalf,
    /// μ at the given quantile (linear interpolation) of the difficulties.
    Quantile(f64),
}

impl AgePolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AgePolicy::Fixed(mu) if !(mu > 0.0 && mu.is_finite()) => {
                Err(Error::usage(format!("fixed age parameter must be positive, got {mu}")))
            }
            AgePolicy::TopK(0) => Err(Error::usage("topk needs k >= 1")),
            AgePolicy::Quantile(rho) if !(0.0..=1.0).contains(&rho) => {
                Err(Error::usage(format!("quantile {rho} outside [0, 1]")))
            }
            _ => Ok(()),
        }
    }

    /// Number of tasks a top-k style policy keeps, if any.
    pub fn cap(&self, n: usize) -> Option<usize> {
        match *self {
            AgePolicy::TopK(k) => Some(k.min(n)),
            AgePolicy::TopHalf => Some(n.div_ceil(2)),
            _ => None,
        }
    }

    /// μ for the given difficulties.
    pub fn resolve(&self, etas: &[f64]) -> Result<f64> {
        self.validate()?;
        if etas.is_empty() {
            return Err(Error::usage("age parameter needs at least one difficulty"));
        }
        let mut sorted = etas.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mu = match *self {
            AgePolicy::Fixed(mu) => return Ok(mu),
            AgePolicy::TopK(_) | AgePolicy::TopHalf => {
                let k = self.cap(etas.len()).expect("top-k policy");
                sorted[k - 1] * (1.0 + TOPK_MARGIN)
            }
            AgePolicy::Quantile(rho) => {
                let pos = rho * (sorted.len() - 1) as f64;
                let lo = pos.floor() as usize;
                let hi = pos.ceil() as usize;
                sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
            }
        };
        Ok(mu.max(MIN_MU))
    }

    pub fn label(&self) -> String {
        match *self {
            AgePolicy::Fixed(mu) => format!("fixed:{mu}"),
            AgePolicy::TopK(k) => format!("topk:{k}"),
            AgePolicy::TopHalf => "top_half".to_string(),
            AgePolicy::Quantile(rho) => format!("quantile:{rho}"),
        }
    }
}

/// Per-past-task weights, each in [0, 1].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PriorityWeights(Vec<f64>);

impl PriorityWeights {
    pub fn new(v: Vec<f64>) -> Result<Self> {
        validate_weights(&v)?;
        Ok(PriorityWeights(v))
    }

    pub fn ones(n: usize) -> Self {
        PriorityWeights(vec![1.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of strictly positive weights.
    pub fn active(&self) -> usize {
        self.0.iter().filter(|&&v| v > 0.0).count()
    }
}

/// Result of one weight update.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightUpdate {
    pub etas: Vec<f64>,
    pub weights: PriorityWeights,
    pub mu: f64,
    pub warnings: Vec<String>,
}

/// Difficulties, μ and weights for the given past-task accuracies.
///
/// Top-k policies additionally zero every task beyond the k smallest
/// difficulties (ties broken by task order), so exactly `min(k, n)` tasks
/// can stay positive even when accuracies tie.
pub fn weight_vector(psis: &[f64], policy: AgePolicy, kind: RegularizerKind) -> Result<WeightUpdate> {
    if psis.is_empty() {
        return Err(Error::usage("weight update needs at least one past task"));
    }
    let etas = psis
        .iter()
        .map(|&p| difficulty(p).map(Difficulty::eta))
        .collect::<Result<Vec<_>>>()?;
    let mu = policy.resolve(&etas)?;
    let mut warnings = Vec::new();
    if kind == RegularizerKind::Logarithmic && logarithmic_falls_back(mu) {
        warnings.push(format!(
            "logarithmic regularizer needs 0 < mu < 1 (mu = {mu}); used linear weights"
        ));
    }
    let mut v = etas
        .iter()
        .map(|&eta| variant_weight(eta, mu, kind))
        .collect::<Result<Vec<_>>>()?;
    if let Some(k) = policy.cap(etas.len()) {
        let mut order: Vec<usize> = (0..etas.len()).collect();
        order.sort_by(|&a, &b| etas[a].total_cmp(&etas[b]).then(a.cmp(&b)));
        for &t in &order[k..] {
            v[t] = 0.0;
        }
    }
    Ok(WeightUpdate {
        etas,
        weights: PriorityWeights::new(v)?,
        mu,
        warnings,
    })
}
