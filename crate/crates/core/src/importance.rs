//! Per-parameter importance: diagonal empirical Fisher (EWC), output-norm
//! gradient magnitude (MAS), and the online-EWC running sum.

use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{GradMode, MlpModel, ParamVector};
use crate::stream::Dataset;

/// Samples per backprop chunk. Results do not depend on it.
const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceKind {
    Fisher,
    Mas,
}

/// Nonnegative importance per parameter, aligned with [`ParamVector`].
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceVector {
    values: Vec<f64>,
    kind: ImportanceKind,
}

impl ImportanceVector {
    pub fn new(values: Vec<f64>, kind: ImportanceKind) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Numeric(format!(
                "importance entry {i} is {} (must be finite and >= 0)",
                values[i]
            )));
        }
        Ok(ImportanceVector { values, kind })
    }

    pub fn zeros(n: usize, kind: ImportanceKind) -> Self {
        ImportanceVector {
            values: vec![0.0; n],
            kind,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> ImportanceKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn per_sample_mean<F>(
    model: &MlpModel,
    data: &Dataset,
    head: usize,
    sample_cap: usize,
    mode: GradMode,
    output_grad: F,
) -> Result<Vec<f64>>
where
    F: Fn(&[f64], usize, &mut [f64]),
{
    if data.is_empty() || sample_cap == 0 {
        return Err(Error::usage("importance needs at least one sample"));
    }
    let k = sample_cap.min(data.len());
    let mut acc = vec![0.0; model.param_count()];
    for start in (0..k).step_by(CHUNK) {
        let idx: Vec<usize> = (start..(start + CHUNK).min(k)).collect();
        let chunk = data.subset(&idx)?;
        let labels = chunk.labels();
        model.backprop(chunk.inputs(), head, mode, &mut acc, |r, z, d| {
            output_grad(z, labels[r], d)
        })?;
    }
    let inv = 1.0 / k as f64;
    for (i, a) in acc.iter_mut().enumerate() {
        *a *= inv;
        if !a.is_finite() {
            return Err(Error::Numeric(format!("non-finite importance at parameter {i}")));
        }
    }
    Ok(acc)
}

/// Diagonal empirical Fisher: mean over the first `min(sample_cap, n)`
/// samples of `(∂ log p(y|x) / ∂θ_i)²`, each sample taken individually.
pub fn fisher_diagonal(
    model: &MlpModel,
    data: &Dataset,
    head: usize,
    sample_cap: usize,
) -> Result<ImportanceVector> {
    let width = model.head_width(head)?;
    if data.labels().iter().any(|&y| y >= width) {
        return Err(Error::usage(format!("labels exceed head width {width}")));
    }
    let values = per_sample_mean(model, data, head, sample_cap, GradMode::Squared, |z, y, d| {
        // ∂(-log p_y)/∂z = softmax(z) - e_y; the sign vanishes when squared
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (dj, &zj) in d.iter_mut().zip(z) {
            *dj = (zj - max).exp();
            sum += *dj;
        }
        d.iter_mut().for_each(|dj| *dj /= sum);
        d[y] -= 1.0;
    })?;
    ImportanceVector::new(values, ImportanceKind::Fisher)
}

/// MAS importance: mean over the first `min(sample_cap, n)` samples of
/// `|∂(½‖logits(x)‖²) / ∂θ_i|`. Labels are ignored.
pub fn mas_importance(
    model: &MlpModel,
    data: &Dataset,
    head: usize,
    sample_cap: usize,
) -> Result<ImportanceVector> {
    model.head(head)?;
    let values = per_sample_mean(model, data, head, sample_cap, GradMode::Abs, |z, _, d| {
        d.copy_from_slice(z)
    })?;
    ImportanceVector::new(values, ImportanceKind::Mas)
}

/// `gamma * prev + new_fisher`.
pub fn online_ewc_accumulate(
    prev: &ImportanceVector,
    new_fisher: &ImportanceVector,
    gamma: f64,
) -> Result<ImportanceVector> {
    if prev.len() != new_fisher.len() {
        return Err(Error::shape(format!(
            "accumulating importance of length {} into {}",
            new_fisher.len(),
            prev.len()
        )));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::usage(format!("online-EWC decay {gamma} outside [0, 1]")));
    }
    let values = prev
        .values
        .iter()
        .zip(&new_fisher.values)
        .map(|(p, f)| gamma * p + f)
        .collect();
    ImportanceVector::new(values, new_fisher.kind)
}

/// Frozen state of a finished task.
#[derive(Debug, Clone)]
pub struct TaskSnapshot {
    pub task_id: usize,
    pub head_id: usize,
    pub theta_star: ParamVector,
    pub importance: ImportanceVector,
    pub eval_subset: Arc<Dataset>,
    /// Accuracy on `eval_subset`, refreshed whenever it is re-measured.
    pub psi: f64,
}

impl TaskSnapshot {
    pub fn new(
        task_id: usize,
        head_id: usize,
        theta_star: ParamVector,
        importance: ImportanceVector,
        eval_subset: Arc<Dataset>,
        psi: f64,
    ) -> Result<Self> {
        if theta_star.len() != importance.len() {
            return Err(Error::shape(format!(
                "snapshot with {} parameters but {} importances",
                theta_star.len(),
                importance.len()
            )));
        }
        if !(0.0..=1.0).contains(&psi) {
            return Err(Error::usage(format!("accuracy {psi} outside [0, 1]")));
        }
        Ok(TaskSnapshot {
            task_id,
            head_id,
            theta_star,
            importance,
            eval_subset,
            psi,
        })
    }

    /// Writes the binary sidecar:
    ///
    /// ```text
    /// magic      8 bytes  "SPWCSNP1"
    /// task_id    u64 LE
    /// head_id    u64 LE
    /// psi        f64 LE
    /// kind       u8       0 = fisher, 1 = mas
    /// n          u64 LE   then n x f64 LE   theta_star
    /// n          u64 LE   then n x f64 LE   importance
    /// ```
    ///
    /// The evaluation subset is not stored; it is re-attached by task id.
    pub fn write_sidecar<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(SIDECAR_MAGIC)?;
        w.write_all(&(self.task_id as u64).to_le_bytes())?;
        w.write_all(&(self.head_id as u64).to_le_bytes())?;
        w.write_all(&self.psi.to_le_bytes())?;
        w.write_all(&[match self.importance.kind {
            ImportanceKind::Fisher => 0,
            ImportanceKind::Mas => 1,
        }])?;
        for block in [self.theta_star.as_slice(), self.importance.values()] {
            w.write_all(&(block.len() as u64).to_le_bytes())?;
            for x in block {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_sidecar<R: Read>(mut r: R, eval_subset: Arc<Dataset>) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != SIDECAR_MAGIC {
            return Err(Error::usage("not a snapshot sidecar"));
        }
        let mut word = [0u8; 8];
        let mut u64_le = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut word)?;
            Ok(u64::from_le_bytes(word))
        };
        let task_id = u64_le(&mut r)? as usize;
        let head_id = u64_le(&mut r)? as usize;
        let psi = f64::from_bits(u64_le(&mut r)?);
        let mut kind = [0u8; 1];
        r.read_exact(&mut kind)?;
        let kind = match kind[0] {
            0 => ImportanceKind::Fisher,
            1 => ImportanceKind::Mas,
            k => return Err(Error::usage(format!("unknown importance kind tag {k}"))),
        };
        let mut block = |r: &mut R| -> Result<Vec<f64>> {
            let n = u64_le(r)? as usize;
            let mut bytes = vec![0u8; n.checked_mul(8).ok_or_else(|| Error::usage("bad length"))?];
            r.read_exact(&mut bytes)?;
            Ok(bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let theta = block(&mut r)?;
        let importance = block(&mut r)?;
        TaskSnapshot::new(
            task_id,
            head_id,
            ParamVector::from_vec(theta),
            ImportanceVector::new(importance, kind)?,
            eval_subset,
            psi,
        )
    }
}

const SIDECAR_MAGIC: &[u8; 8] = b"SPWCSNP1";

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{Matrix, Rng};

    fn random_data(n: usize, d: usize, classes: usize, seed: u64) -> Dataset {
        let mut rng = Rng::seed_from(seed);
        let x = (0..n * d).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let y = (0..n).map(|_| rng.below(classes)).collect();
        Dataset::new(Matrix::from_vec(n, d, x).unwrap(), y, classes, vec![d]).unwrap()
    }

    #[test]
    fn inactive_head_importance_is_exactly_zero() {
        let mut rng = Rng::seed_from(1);
        let model = MlpModel::new(4, &[5], &[3, 3], &mut rng).unwrap();
        let data = random_data(20, 4, 3, 2);
        for imp in [
            fisher_diagonal(&model, &data, 0, 100).unwrap(),
            mas_importance(&model, &data, 0, 100).unwrap(),
        ] {
            assert!(imp.values()[model.heads()[1].range()].iter().all(|&v| v == 0.0));
            assert!(imp.values().iter().all(|&v| v >= 0.0));
            assert!(imp.values()[model.heads()[0].range()].iter().any(|&v| v > 0.0));
        }
    }

    #[test]
    fn zero_model_has_zero_mas_importance() {
        let model = MlpModel::zeros(4, &[(3, crate::numeric::Activation::Relu)], &[2]).unwrap();
        let data = random_data(10, 4, 2, 3);
        let imp = mas_importance(&model, &data, 0, 10).unwrap();
        assert!(imp.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sample_cap_uses_first_samples_only() {
        let mut rng = Rng::seed_from(4);
        let model = MlpModel::new(3, &[4], &[2], &mut rng).unwrap();
        let data = random_data(50, 3, 2, 5);
        let capped = fisher_diagonal(&model, &data, 0, 7).unwrap();
        let prefix = fisher_diagonal(&model, &data.head(7), 0, 1000).unwrap();
        assert_eq!(capped, prefix);
    }

    #[test]
    fn chunking_does_not_change_results() {
        let mut rng = Rng::seed_from(6);
        let model = MlpModel::new(3, &[4], &[2], &mut rng).unwrap();
        let data = random_data(600, 3, 2, 7);
        let all = mas_importance(&model, &data, 0, 600).unwrap();
        // recompute with one chunk per sample
        let mut acc = vec![0.0; model.param_count()];
        for i in 0..600 {
            let one = data.subset(&[i]).unwrap();
            model
                .backprop(one.inputs(), 0, GradMode::Abs, &mut acc, |_, z, d| d.copy_from_slice(z))
                .unwrap();
        }
        for (a, b) in all.values().iter().zip(&acc) {
            assert!((a - b / 600.0).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn online_accumulation_rules() {
        let p = ImportanceVector::new(vec![1.0, 2.0], ImportanceKind::Fisher).unwrap();
        let f = ImportanceVector::new(vec![0.5, 0.25], ImportanceKind::Fisher).unwrap();
        assert_eq!(online_ewc_accumulate(&p, &f, 0.0).unwrap(), f);
        let zero = ImportanceVector::zeros(2, ImportanceKind::Fisher);
        assert_eq!(online_ewc_accumulate(&zero, &f, 1.0).unwrap(), f);
        let short = ImportanceVector::zeros(1, ImportanceKind::Fisher);
        assert!(online_ewc_accumulate(&short, &f, 0.5).is_err());
        assert!(online_ewc_accumulate(&p, &f, 1.5).is_err());
    }

    #[test]
    fn negative_importance_rejected() {
        assert!(ImportanceVector::new(vec![0.0, -1e-3], ImportanceKind::Mas).is_err());
    }
}
