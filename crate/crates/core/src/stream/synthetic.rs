use super::{assemble, Dataset, SplitCounts, SplitIndices, Task};
use crate::error::{Error, Result};
use crate::numeric::{Matrix, Rng};

/// Gaussian-blob task stream.
///
/// `classes` unit-norm means are drawn once; task `t` rotates that layout by
/// its own random orthogonal matrix and samples isotropic noise of the given
/// variance around each rotated mean.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub tasks: usize,
    pub classes: usize,
    pub dim: usize,
    pub variance: f64,
    pub counts: SplitCounts,
    pub eval_subset: usize,
    pub seed: u64,
}

const MEANS_STREAM: u64 = 10;
const TASK_STREAM_BASE: u64 = 1 << 20;

/// Orthogonal matrix from modified Gram–Schmidt on a Gaussian matrix. Rows
/// are the basis vectors.
fn random_rotation(dim: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while basis.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        // a near-dependent draw is simply redrawn
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    basis
}

fn sample_split(
    n: usize,
    means: &[Vec<f64>],
    std: f64,
    rng: &mut Rng,
) -> Result<Dataset> {
    let (c, d) = (means.len(), means[0].len());
    let mut labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    rng.shuffle(&mut labels);
    let mut data = Vec::with_capacity(n * d);
    for &y in &labels {
        for &m in &means[y] {
            data.push(m + std * rng.normal());
        }
    }
    Dataset::new(Matrix::from_vec(n, d, data)?, labels, c, vec![d])
}

pub fn make_synthetic_stream(spec: &SyntheticSpec) -> Result<Vec<Task>> {
    if spec.classes < 2 {
        return Err(Error::usage(format!(
            "synthetic stream needs at least 2 classes, got {}",
            spec.classes
        )));
    }
    if spec.dim == 0 || spec.tasks == 0 {
        return Err(Error::usage("synthetic stream needs dim >= 1 and tasks >= 1"));
    }
    if !(spec.variance >= 0.0 && spec.variance.is_finite()) {
        return Err(Error::usage("variance must be finite and nonnegative"));
    }
    let mut mean_rng = Rng::for_stream(spec.seed, MEANS_STREAM);
    let layout: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| {
            let v: Vec<f64> = (0..spec.dim).map(|_| mean_rng.normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    let std = spec.variance.sqrt();
    let counts = spec.counts;
    (0..spec.tasks)
        .map(|t| {
            let stream = TASK_STREAM_BASE + 4 * t as u64;
            let rotation = random_rotation(spec.dim, &mut Rng::for_stream(spec.seed, stream));
            let means: Vec<Vec<f64>> = layout
                .iter()
                .map(|m| {
                    rotation
                        .iter()
                        .map(|row| row.iter().zip(m).map(|(a, b)| a * b).sum())
                        .collect()
                })
                .collect();
            let split = |n: usize, k: u64| {
                sample_split(n, &means, std, &mut Rng::for_stream(spec.seed, stream + k))
            };
            let splits = (split(counts.train, 1)?, split(counts.valid, 2)?, split(counts.test, 3)?);
            let source = SplitIndices {
                train: (0..counts.train).collect(),
                valid: (counts.train..counts.train + counts.valid).collect(),
                test: (counts.train + counts.valid..counts.total()).collect(),
            };
            Ok(assemble(
                t,
                splits,
                (0..spec.classes).collect(),
                source,
                spec.eval_subset,
            ))
        })
        .collect()
}
