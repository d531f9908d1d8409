//! Sequential task training with quadratic consolidation penalties.
//!
//! Every method trains the shared trunk and the task's own head by minibatch
//! SGD with momentum. Penalty methods add, at every step,
//! `Σ_t v_t · c · Σ_i Γ_{t,i} (θ_i − θ*_{t,i})²` with `c = λ/2` for the
//! Fisher family and `c = γ` for the MAS family. Self-paced methods pick
//! `v` once per task from the past tasks' current accuracies; plain methods
//! use `v = 1`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::importance::{
    fisher_diagonal, mas_importance, online_ewc_accumulate, ImportanceVector, TaskSnapshot,
};
use crate::metrics::{acf, apa, ps, AccuracyMatrix, StorageLedger};
use crate::numeric::{MlpModel, ParamVector, Rng, SgdMomentum};
use crate::selfpaced::{weight_vector, AgePolicy, RegularizerKind};
use crate::stream::{Dataset, Task};

/// Sub-stream for weight initialisation.
const INIT_STREAM: u64 = 0;
/// Sub-stream base for per-task minibatch order.
const SHUFFLE_STREAM_BASE: u64 = 100;

fn default_decay() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum Method {
    Finetune,
    Joint,
    Ewc {
        lambda: f64,
    },
    OnlineEwc {
        lambda: f64,
        #[serde(default = "default_decay")]
        decay: f64,
    },
    Mas {
        gamma: f64,
    },
    SpEwc {
        lambda: f64,
        #[serde(default)]
        kind: RegularizerKind,
        #[serde(default)]
        policy: AgePolicy,
    },
    SpMas {
        gamma: f64,
        #[serde(default)]
        kind: RegularizerKind,
        #[serde(default)]
        policy: AgePolicy,
    },
}

/// Which importance measure and quadratic scaling a penalty uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyFamily {
    /// Fisher importance, `(λ/2)·Γ·d²`.
    Ewc,
    /// MAS importance, `γ·Ω·d²`.
    Mas,
}

impl PenaltyFamily {
    fn value_coefficient(self, strength: f64) -> f64 {
        match self {
            PenaltyFamily::Ewc => 0.5 * strength,
            PenaltyFamily::Mas => strength,
        }
    }
}

impl Method {
    pub fn tag(&self) -> &'static str {
        match self {
            Method::Finetune => "finetune",
            Method::Joint => "joint",
            Method::Ewc { .. } => "ewc",
            Method::OnlineEwc { .. } => "online_ewc",
            Method::Mas { .. } => "mas",
            Method::SpEwc { .. } => "sp_ewc",
            Method::SpMas { .. } => "sp_mas",
        }
    }

    pub fn family(&self) -> Option<PenaltyFamily> {
        match self {
            Method::Finetune | Method::Joint => None,
            Method::Ewc { .. } | Method::OnlineEwc { .. } | Method::SpEwc { .. } => {
                Some(PenaltyFamily::Ewc)
            }
            Method::Mas { .. } | Method::SpMas { .. } => Some(PenaltyFamily::Mas),
        }
    }

    /// λ or γ; 0 for methods without a penalty.
    pub fn strength(&self) -> f64 {
        match *self {
            Method::Finetune | Method::Joint => 0.0,
            Method::Ewc { lambda } | Method::OnlineEwc { lambda, .. } | Method::SpEwc { lambda, .. } => {
                lambda
            }
            Method::Mas { gamma } | Method::SpMas { gamma, .. } => gamma,
        }
    }

    pub fn self_paced(&self) -> Option<(RegularizerKind, AgePolicy)> {
        match *self {
            Method::SpEwc { kind, policy, .. } | Method::SpMas { kind, policy, .. } => {
                Some((kind, policy))
            }
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.strength();
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::usage(format!(
                "{} strength must be finite and nonnegative, got {s}",
                self.tag()
            )));
        }
        if let Method::OnlineEwc { decay, .. } = *self {
            if !(0.0..=1.0).contains(&decay) {
                return Err(Error::usage(format!("online_ewc decay {decay} outside [0, 1]")));
            }
        }
        if let Some((_, policy)) = self.self_paced() {
            policy.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyper {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default = "Hyper::default_momentum")]
    pub momentum: f64,
    /// Samples used for each importance estimate.
    #[serde(default = "Hyper::default_importance_samples")]
    pub importance_samples: usize,
}

impl Hyper {
    fn default_momentum() -> f64 {
        0.9
    }

    fn default_importance_samples() -> usize {
        1000
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.importance_samples == 0 {
            return Err(Error::usage(
                "epochs, batch_size and importance_samples must be positive",
            ));
        }
        if self.hidden.contains(&0) {
            return Err(Error::usage("hidden layer widths must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::usage(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::usage(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        Ok(())
    }
}

/// Operation counters of the penalty evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PenaltyCounter {
    /// Calls that evaluated the penalty.
    pub evaluations: u64,
    /// Snapshots read across all calls.
    pub snapshots_touched: u64,
}

/// Adds the penalty gradient into `grad` and returns the penalty value.
/// Snapshots with `v_t = 0` are never read.
pub fn accumulate_penalty(
    theta: &[f64],
    snapshots: &[TaskSnapshot],
    v: &[f64],
    strength: f64,
    family: PenaltyFamily,
    grad: &mut [f64],
    counter: &mut PenaltyCounter,
) -> Result<f64> {
    if v.len() != snapshots.len() {
        return Err(Error::shape(format!(
            "{} priority weights for {} snapshots",
            v.len(),
            snapshots.len()
        )));
    }
    if grad.len() != theta.len() {
        return Err(Error::shape(format!(
            "gradient of length {} for {} parameters",
            grad.len(),
            theta.len()
        )));
    }
    counter.evaluations += 1;
    let coef = family.value_coefficient(strength);
    let mut total = 0.0;
    for (snap, &vt) in snapshots.iter().zip(v) {
        if vt == 0.0 {
            continue;
        }
        let star = snap.theta_star.as_slice();
        let imp = snap.importance.values();
        if star.len() != theta.len() {
            return Err(Error::shape(format!(
                "snapshot of task {} has {} parameters, model has {}",
                snap.task_id,
                star.len(),
                theta.len()
            )));
        }
        counter.snapshots_touched += 1;
        let c = coef * vt;
        let gc = 2.0 * c;
        let mut sum = 0.0;
        for (((g, &th), &st), &w) in grad.iter_mut().zip(theta).zip(star).zip(imp) {
            let wd = w * (th - st);
            sum += wd * (th - st);
            *g += gc * wd;
        }
        total += c * sum;
    }
    Ok(total)
}

/// Penalty value and its gradient as a fresh vector.
pub fn penalty_and_grad(
    theta: &ParamVector,
    snapshots: &[TaskSnapshot],
    v: &[f64],
    strength: f64,
    family: PenaltyFamily,
) -> Result<(f64, ParamVector)> {
    let mut grad = ParamVector::zeros(theta.len());
    let mut counter = PenaltyCounter::default();
    let value = accumulate_penalty(theta, snapshots, v, strength, family, &mut grad, &mut counter)?;
    Ok((value, grad))
}

/// Weighted distance to one snapshot: `(λ/2) Σ_i Γ_i (θ_i − θ*_i)²`.
pub fn eq7_penalty(theta: &[f64], snapshot: &TaskSnapshot, lambda: f64) -> Result<f64> {
    if theta.len() != snapshot.theta_star.len() {
        return Err(Error::shape(format!(
            "{} parameters against a snapshot of {}",
            theta.len(),
            snapshot.theta_star.len()
        )));
    }
    let sum: f64 = theta
        .iter()
        .zip(snapshot.theta_star.iter())
        .zip(snapshot.importance.values())
        .map(|((th, st), w)| w * (th - st) * (th - st))
        .sum();
    Ok(0.5 * lambda * sum)
}

/// Fraction of argmax predictions on `data` equal to the labels.
pub fn evaluate_accuracy(model: &MlpModel, data: &Dataset, head: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::usage("accuracy on an empty split"));
    }
    let predictions = model.predict(data.inputs(), head)?;
    let correct = predictions
        .iter()
        .zip(data.labels())
        .filter(|(p, y)| p == y)
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// Priority weight of one past task at one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRecord {
    pub stage: usize,
    pub task: usize,
    pub psi: f64,
    pub eta: f64,
    pub v: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub stage: usize,
    pub epoch: usize,
    /// Per-sample mean over the epoch of cross-entropy plus penalty.
    pub objective: f64,
    pub ce: f64,
    pub penalty: f64,
}

/// What happened while training one task.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    /// Resolved age parameter (self-paced methods with past tasks only).
    pub mu: Option<f64>,
    /// Snapshots with positive weight in this stage's penalty.
    pub retained_k: usize,
    /// Snapshots stored and eligible for this stage's penalty.
    pub stored: usize,
    pub penalty: PenaltyCounter,
    /// Steps taken while training the task.
    pub steps: u64,
    pub snapshot_bytes: u64,
    pub eval_subset_bytes: u64,
    pub warnings: Vec<String>,
}

/// Per-stage metrics derived from a run.
#[derive(Debug, Clone, PartialEq)]
pub struct StageMetrics {
    pub stage: usize,
    pub apa: f64,
    pub acf: f64,
    pub ps_active: f64,
    pub ps_total: f64,
    pub mu: Option<f64>,
    pub retained_k: usize,
    pub accuracies: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLog {
    pub accuracy: AccuracyMatrix,
    pub stages: Vec<StageRecord>,
    pub weights: Vec<WeightRecord>,
    pub convergence: Vec<ConvergenceRecord>,
    /// Storage counting only snapshots with positive weight.
    pub ledger_active: StorageLedger,
    /// Storage counting every stored snapshot.
    pub ledger_total: StorageLedger,
}

impl RunLog {
    pub fn stage_metrics(&self) -> Result<Vec<StageMetrics>> {
        (1..=self.accuracy.stages())
            .map(|m| {
                let rec = &self.stages[m - 1];
                Ok(StageMetrics {
                    stage: m,
                    apa: apa(&self.accuracy, m)?,
                    acf: acf(&self.accuracy, m)?,
                    ps_active: ps(&self.ledger_active, m)?,
                    ps_total: ps(&self.ledger_total, m)?,
                    mu: rec.mu,
                    retained_k: rec.retained_k,
                    accuracies: self.accuracy.row(m).to_vec(),
                })
            })
            .collect()
    }
}

/// Everything carried from one task to the next.
#[derive(Debug, Clone)]
pub struct ContinualState {
    pub model: MlpModel,
    /// One per finished task, ordered by task id (plain and self-paced
    /// penalty methods).
    pub snapshots: Vec<TaskSnapshot>,
    /// Single running term (online EWC).
    pub consolidated: Option<TaskSnapshot>,
    /// Training sets of all tasks so far with their heads (joint only).
    pub joint_buffer: Vec<(Dataset, usize)>,
    pub accuracy: AccuracyMatrix,
    pub weights_log: Vec<Vec<f64>>,
    seed: u64,
}

impl ContinualState {
    pub fn new(model: MlpModel, seed: u64) -> Self {
        ContinualState {
            model,
            snapshots: Vec::new(),
            consolidated: None,
            joint_buffer: Vec::new(),
            accuracy: AccuracyMatrix::new(),
            weights_log: Vec::new(),
            seed,
        }
    }

    /// Number of tasks trained so far.
    pub fn tasks_trained(&self) -> usize {
        self.accuracy.stages().max(self.weights_log.len())
    }
}

fn dataset_bytes(d: &Dataset) -> u64 {
    (d.len() * d.dim() * std::mem::size_of::<f64>()) as u64
}

/// Training data of one step: rows of a dataset addressed to a head.
struct Source<'a> {
    data: &'a Dataset,
    head: usize,
}

/// Minimises cross-entropy plus the penalty for `hyper.epochs` epochs and
/// returns the step count.
#[allow(clippy::too_many_arguments)]
fn optimise(
    model: &mut MlpModel,
    sources: &[Source<'_>],
    penalty: Option<(&[TaskSnapshot], &[f64], f64, PenaltyFamily)>,
    hyper: &Hyper,
    rng: &mut Rng,
    stage: usize,
    counter: &mut PenaltyCounter,
    log: &mut Vec<ConvergenceRecord>,
) -> Result<u64> {
    // (source, row) pairs in a fixed order; shuffled each epoch
    let mut order: Vec<(usize, usize)> = sources
        .iter()
        .enumerate()
        .flat_map(|(s, src)| (0..src.data.len()).map(move |r| (s, r)))
        .collect();
    if order.is_empty() {
        return Err(Error::usage("training on an empty task"));
    }
    let n = model.param_count();
    let mut opt = SgdMomentum::new(n, hyper.lr, hyper.momentum);
    let mut grad = vec![0.0; n];
    let mut steps = 0u64;
    for epoch in 1..=hyper.epochs {
        rng.shuffle(&mut order);
        // sums weighted by batch size so a short trailing batch counts per sample
        let (mut ce_sum, mut pen_sum, mut seen) = (0.0, 0.0, 0usize);
        for batch in order.chunks(hyper.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            let mut ce = 0.0;
            for (s, src) in sources.iter().enumerate() {
                let rows: Vec<usize> = batch.iter().filter(|p| p.0 == s).map(|p| p.1).collect();
                if rows.is_empty() {
                    continue;
                }
                let inputs = src.data.inputs().select_rows(&rows);
                let labels: Vec<usize> = rows.iter().map(|&r| src.data.labels()[r]).collect();
                ce += model.accumulate_ce_grad(&inputs, &labels, src.head, scale, &mut grad)?;
            }
            ce *= scale;
            let pen = match penalty {
                Some((snaps, v, strength, family)) => accumulate_penalty(
                    model.params(),
                    snaps,
                    v,
                    strength,
                    family,
                    &mut grad,
                    counter,
                )?,
                None => 0.0,
            };
            opt.step(model.params_mut(), &grad)?;
            let w = batch.len() as f64;
            ce_sum += ce * w;
            pen_sum += pen * w;
            seen += batch.len();
            steps += 1;
        }
        let b = seen as f64;
        log.push(ConvergenceRecord {
            stage,
            epoch,
            objective: (ce_sum + pen_sum) / b,
            ce: ce_sum / b,
            penalty: pen_sum / b,
        });
    }
    Ok(steps)
}

fn importance_for(
    family: PenaltyFamily,
    model: &MlpModel,
    task: &Task,
    hyper: &Hyper,
) -> Result<ImportanceVector> {
    match family {
        PenaltyFamily::Ewc => fisher_diagonal(model, &task.train, task.head_id, hyper.importance_samples),
        PenaltyFamily::Mas => mas_importance(model, &task.train, task.head_id, hyper.importance_samples),
    }
}

/// Trains one task and records its stage entries in `log`. The accuracy row
/// is filled by the caller, which owns the test splits.
pub fn learn_task(
    state: &mut ContinualState,
    task: &Task,
    method: &Method,
    hyper: &Hyper,
    log: &mut RunLog,
) -> Result<()> {
    method.validate()?;
    hyper.validate()?;
    let stage = log.stages.len() + 1;
    let mut record = StageRecord {
        stage,
        ..StageRecord::default()
    };

    // Weights come first: past-task accuracies are measured with the
    // inherited model before any step on the new task.
    let mut v: Vec<f64> = match method {
        Method::SpEwc { .. } | Method::SpMas { .. } if !state.snapshots.is_empty() => {
            let (kind, policy) = method.self_paced().expect("self-paced method");
            for snap in &mut state.snapshots {
                snap.psi = evaluate_accuracy(&state.model, &snap.eval_subset, snap.head_id)?;
            }
            let psis: Vec<f64> = state.snapshots.iter().map(|s| s.psi).collect();
            let update = weight_vector(&psis, policy, kind)?;
            for ((snap, &eta), &w) in state
                .snapshots
                .iter()
                .zip(&update.etas)
                .zip(update.weights.as_slice())
            {
                log.weights.push(WeightRecord {
                    stage,
                    task: snap.task_id + 1,
                    psi: snap.psi,
                    eta,
                    v: w,
                    mu: update.mu,
                });
            }
            record.mu = Some(update.mu);
            record.warnings = update.warnings;
            update.weights.as_slice().to_vec()
        }
        Method::OnlineEwc { .. } => state.consolidated.iter().map(|_| 1.0).collect(),
        _ => vec![1.0; state.snapshots.len()],
    };
    if method.family().is_none() {
        v.clear();
    }
    let snaps: &[TaskSnapshot] = match method {
        Method::OnlineEwc { .. } => state.consolidated.as_slice(),
        _ if method.family().is_some() => &state.snapshots,
        _ => &[],
    };
    record.stored = snaps.len();
    record.retained_k = v.iter().filter(|&&w| w > 0.0).count();
    state.weights_log.push(v.clone());

    // λ = 0 and all-zero weights both reduce to plain cross-entropy.
    let penalty = match method.family() {
        Some(family) if method.strength() > 0.0 && record.retained_k > 0 => {
            Some((snaps, v.as_slice(), method.strength(), family))
        }
        _ => None,
    };

    if let Method::Joint = method {
        state.joint_buffer.push((task.train.clone(), task.head_id));
    }
    let sources: Vec<Source<'_>> = match method {
        Method::Joint => state
            .joint_buffer
            .iter()
            .map(|(data, head)| Source { data, head: *head })
            .collect(),
        _ => vec![Source {
            data: &task.train,
            head: task.head_id,
        }],
    };
    let mut rng = Rng::for_stream(state.seed, SHUFFLE_STREAM_BASE + stage as u64);
    let mut model = state.model.clone();
    record.steps = optimise(
        &mut model,
        &sources,
        penalty,
        hyper,
        &mut rng,
        stage,
        &mut record.penalty,
        &mut log.convergence,
    )?;
    drop(sources);
    state.model = model;

    if let Some(family) = method.family() {
        let importance = importance_for(family, &state.model, task, hyper)?;
        let psi = evaluate_accuracy(&state.model, &task.eval_subset, task.head_id)?;
        let theta = state.model.params().clone();
        match method {
            Method::OnlineEwc { decay, .. } => {
                let importance = match &state.consolidated {
                    Some(prev) => online_ewc_accumulate(&prev.importance, &importance, *decay)?,
                    None => importance,
                };
                state.consolidated = Some(TaskSnapshot::new(
                    task.id,
                    task.head_id,
                    theta,
                    importance,
                    Arc::clone(&task.eval_subset),
                    psi,
                )?);
            }
            _ => state.snapshots.push(TaskSnapshot::new(
                task.id,
                task.head_id,
                theta,
                importance,
                Arc::clone(&task.eval_subset),
                psi,
            )?),
        }
    }

    let block = 2 * state.model.param_count() as u64;
    let total = match method {
        Method::SpEwc { .. } | Method::SpMas { .. } => record.stored,
        _ => record.retained_k,
    };
    log.ledger_active.push(block * (1 + record.retained_k as u64));
    log.ledger_total.push(block * (1 + total as u64));
    let kept = state.snapshots.len() + usize::from(state.consolidated.is_some());
    record.snapshot_bytes = kept as u64 * block * std::mem::size_of::<f64>() as u64;
    record.eval_subset_bytes = state
        .snapshots
        .iter()
        .map(|s| dataset_bytes(&s.eval_subset))
        .sum();
    log.stages.push(record);
    Ok(())
}

/// Builds the model for a stream: relu trunk of `hyper.hidden`, one head per
/// task sized to its classes, weights from the seed's init sub-stream.
pub fn initial_model(tasks: &[Task], hyper: &Hyper, seed: u64) -> Result<MlpModel> {
    let first = tasks.first().ok_or_else(|| Error::usage("empty task stream"))?;
    let heads = tasks.iter().map(Task::num_classes).collect::<Vec<_>>();
    let mut rng = Rng::for_stream(seed, INIT_STREAM);
    MlpModel::new(first.train.dim(), &hyper.hidden, &heads, &mut rng)
}

/// Trains every task in order, filling one accuracy row (test splits of all
/// seen tasks) after each.
pub fn run_stream(
    tasks: &[Task],
    method: &Method,
    hyper: &Hyper,
    seed: u64,
) -> Result<(ContinualState, RunLog)> {
    method.validate()?;
    hyper.validate()?;
    let mut state = ContinualState::new(initial_model(tasks, hyper, seed)?, seed);
    let mut log = RunLog::default();
    for (m, task) in tasks.iter().enumerate() {
        let mut step = || -> Result<()> {
            learn_task(&mut state, task, method, hyper, &mut log)?;
            let row = tasks[..=m]
                .iter()
                .map(|t| evaluate_accuracy(&state.model, &t.test, t.head_id))
                .collect::<Result<Vec<_>>>()?;
            state.accuracy.push_row(row)?;
            Ok(())
        };
        step().map_err(|e| e.in_task(task.id))?;
    }
    log.accuracy = state.accuracy.clone();
    Ok((state, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::importance::ImportanceKind;
    use crate::numeric::Matrix;

    fn snapshot(theta: Vec<f64>, imp: Vec<f64>) -> TaskSnapshot {
        let eval = Arc::new(
            Dataset::new(Matrix::from_vec(1, 1, vec![0.0]).unwrap(), vec![0], 1, vec![1]).unwrap(),
        );
        TaskSnapshot::new(
            0,
            0,
            ParamVector::from_vec(theta),
            ImportanceVector::new(imp, ImportanceKind::Fisher).unwrap(),
            eval,
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn penalty_zero_at_anchor() {
        let s = snapshot(vec![1.0, -2.0], vec![3.0, 4.0]);
        let theta = ParamVector::from_vec(vec![1.0, -2.0]);
        let (p, g) = penalty_and_grad(&theta, &[s], &[1.0], 5.0, PenaltyFamily::Ewc).unwrap();
        assert_eq!(p, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn family_scaling() {
        let s = snapshot(vec![0.0, 0.0], vec![2.0, 1.0]);
        let theta = ParamVector::from_vec(vec![1.0, 3.0]);
        // Σ Γ d² = 2 + 9 = 11
        let (p, g) = penalty_and_grad(&theta, std::slice::from_ref(&s), &[1.0], 4.0, PenaltyFamily::Ewc).unwrap();
        assert_eq!(p, 22.0);
        assert_eq!(g.as_slice(), &[8.0, 12.0]);
        let (p, g) = penalty_and_grad(&theta, std::slice::from_ref(&s), &[0.5], 4.0, PenaltyFamily::Mas).unwrap();
        assert_eq!(p, 22.0);
        assert_eq!(g.as_slice(), &[8.0, 12.0]);
        assert_eq!(eq7_penalty(&theta, &s, 4.0).unwrap(), 22.0);
    }

    #[test]
    fn zero_weight_snapshots_are_skipped() {
        let a = snapshot(vec![0.0; 3], vec![1.0; 3]);
        // mismatched length would error if it were read
        let b = snapshot(vec![0.0; 2], vec![1.0; 2]);
        let theta = [1.0; 3];
        let mut grad = [0.0; 3];
        let mut counter = PenaltyCounter::default();
        let snaps = [a.clone(), b.clone(), a];
        accumulate_penalty(&theta, &snaps, &[1.0, 0.0, 0.3], 1.0, PenaltyFamily::Ewc, &mut grad, &mut counter)
            .unwrap();
        assert_eq!(
            counter,
            PenaltyCounter {
                evaluations: 1,
                snapshots_touched: 2
            }
        );
        assert!(accumulate_penalty(&theta, &snaps, &[1.0, 1.0, 1.0], 1.0, PenaltyFamily::Ewc, &mut grad, &mut counter)
            .is_err());
    }

    #[test]
    fn weight_length_checked() {
        let s = snapshot(vec![0.0], vec![1.0]);
        let theta = ParamVector::from_vec(vec![0.0]);
        assert!(penalty_and_grad(&theta, &[s], &[], 1.0, PenaltyFamily::Ewc).is_err());
    }

    #[test]
    fn method_json() {
        let m: Method = serde_json::from_str(r#"{"method": "sp_ewc", "lambda": 10.0}"#).unwrap();
        assert_eq!(
            m,
            Method::SpEwc {
                lambda: 10.0,
                kind: RegularizerKind::Proposed,
                policy: AgePolicy::TopHalf
            }
        );
        let m: Method = serde_json::from_str(r#"{"method": "finetune"}"#).unwrap();
        assert_eq!(m, Method::Finetune);
        assert!(serde_json::from_str::<Method>(r#"{"method": "ewc", "lambda": 1, "lamda": 2}"#).is_err());
        assert!(Method::Ewc { lambda: -1.0 }.validate().is_err());
    }

    #[test]
    fn constant_prediction_accuracy() {
        // zero model predicts class 0 everywhere
        let model = MlpModel::zeros(2, &[], &[10]).unwrap();
        let labels: Vec<usize> = (0..50).map(|i| i % 10).collect();
        let data = Dataset::new(Matrix::zeros(50, 2), labels, 10, vec![2]).unwrap();
        assert!((evaluate_accuracy(&model, &data, 0).unwrap() - 0.1).abs() < 1e-15);
    }
}
