//! Datasets and sequential task streams.

mod idx;
mod synthetic;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use idx::{dataset_to_idx, load_idx, read_idx, write_idx, IdxFile, IMAGES_MAGIC, LABELS_MAGIC};
pub use synthetic::{make_synthetic_stream, SyntheticSpec};

use crate::error::{Error, Result};
use crate::numeric::{Matrix, Rng};

/// Labelled samples, one row of `inputs` per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
    sample_shape: Vec<usize>,
}

impl Dataset {
    pub fn new(
        inputs: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
        sample_shape: Vec<usize>,
    ) -> Result<Self> {
        if inputs.rows() == 0 {
            return Err(Error::usage("dataset must contain at least one sample"));
        }
        if labels.len() != inputs.rows() {
            return Err(Error::shape(format!(
                "{} labels for {} samples",
                labels.len(),
                inputs.rows()
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::usage(format!(
                "label {y} outside {num_classes} classes"
            )));
        }
        if sample_shape.iter().product::<usize>() != inputs.cols() {
            return Err(Error::shape(format!(
                "sample shape {sample_shape:?} does not match width {}",
                inputs.cols()
            )));
        }
        Ok(Dataset {
            inputs,
            labels,
            num_classes,
            sample_shape,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::usage(format!("sample index {i} out of range")));
        }
        Dataset::new(
            self.inputs.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.num_classes,
            self.sample_shape.clone(),
        )
    }

    /// The first `k` samples (or all of them).
    pub fn head(&self, k: usize) -> Dataset {
        let idx: Vec<usize> = (0..k.min(self.len())).collect();
        self.subset(&idx).expect("prefix indices are in range")
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }

    /// Same samples with labels remapped through `map` (`None` drops the
    /// sample).
    fn relabel(&self, map: &[Option<usize>], num_classes: usize) -> Result<Dataset> {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| map[self.labels[i]].is_some())
            .collect();
        if keep.is_empty() {
            return Err(Error::usage("class selection leaves no samples"));
        }
        Dataset::new(
            self.inputs.select_rows(&keep),
            keep.iter().map(|&i| map[self.labels[i]].unwrap()).collect(),
            num_classes,
            self.sample_shape.clone(),
        )
    }

    fn map_inputs(&self, sample_shape: Vec<usize>, f: impl Fn(&[f64], &mut [f64])) -> Dataset {
        let d: usize = sample_shape.iter().product();
        let mut out = Matrix::zeros(self.len(), d);
        for r in 0..self.len() {
            f(self.inputs.row(r), out.row_mut(r));
        }
        Dataset {
            inputs: out,
            labels: self.labels.clone(),
            num_classes: self.num_classes,
            sample_shape,
        }
    }
}

/// Indices into the source dataset used by each split of a task.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

/// One supervised task of a stream.
#[derive(Debug, Clone)]
pub struct Task {
    pub id: usize,
    pub head_id: usize,
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
    /// Prefix of `test` retained after the task for accuracy probes.
    pub eval_subset: Arc<Dataset>,
    /// `classes[local]` is the original class id.
    pub classes: Vec<usize>,
    pub source: SplitIndices,
}

impl Task {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn local_label(&self, original: usize) -> Option<usize> {
        self.classes.iter().position(|&c| c == original)
    }
}

/// Sample counts per split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.train + self.valid + self.test
    }
}

/// A source dataset with a fixed, seeded train/valid/test partition.
#[derive(Debug, Clone)]
pub struct BaseSplits {
    pub data: Dataset,
    pub indices: SplitIndices,
}

impl BaseSplits {
    /// Shuffles `data` indices with `seed` and takes disjoint consecutive
    /// blocks of the requested sizes.
    pub fn new(data: Dataset, counts: SplitCounts, seed: u64) -> Result<Self> {
        if counts.train == 0 || counts.valid == 0 || counts.test == 0 {
            return Err(Error::usage("every split needs at least one sample"));
        }
        if counts.total() > data.len() {
            return Err(Error::usage(format!(
                "requested {} samples but the source holds {}",
                counts.total(),
                data.len()
            )));
        }
        let order = Rng::for_stream(seed, SPLIT_STREAM).permutation(data.len());
        let (train, rest) = order.split_at(counts.train);
        let (valid, rest) = rest.split_at(counts.valid);
        let test = &rest[..counts.test];
        Ok(BaseSplits {
            indices: SplitIndices {
                train: train.to_vec(),
                valid: valid.to_vec(),
                test: test.to_vec(),
            },
            data,
        })
    }

    fn split(&self) -> Result<(Dataset, Dataset, Dataset)> {
        Ok((
            self.data.subset(&self.indices.train)?,
            self.data.subset(&self.indices.valid)?,
            self.data.subset(&self.indices.test)?,
        ))
    }
}

// Sub-stream ids of the stream seed.
const SPLIT_STREAM: u64 = 0;
const CLASS_ORDER_STREAM: u64 = 1;
pub(crate) const PERMUTATION_STREAM_BASE: u64 = 1 << 32;

fn assemble(
    id: usize,
    (train, valid, test): (Dataset, Dataset, Dataset),
    classes: Vec<usize>,
    source: SplitIndices,
    eval_size: usize,
) -> Task {
    let eval_subset = Arc::new(test.head(eval_size));
    Task {
        id,
        head_id: id,
        train,
        valid,
        test,
        eval_subset,
        classes,
        source,
    }
}

/// Zero-pads a 28×28 image to 32×32, centred.
fn pad_28_to_32(src: &[f64], dst: &mut [f64]) {
    dst.fill(0.0);
    for r in 0..28 {
        dst[(r + 2) * 32 + 2..(r + 2) * 32 + 30].copy_from_slice(&src[r * 28..(r + 1) * 28]);
    }
}

/// Pixel permutation of task `task_index`: identity for task 0, otherwise a
/// Fisher–Yates shuffle of 0..1024 drawn from its own sub-stream of `seed`.
pub fn task_permutation(seed: u64, task_index: usize) -> Vec<usize> {
    if task_index == 0 {
        return (0..1024).collect();
    }
    Rng::for_stream(seed, PERMUTATION_STREAM_BASE + task_index as u64).permutation(1024)
}

/// Permuted-pixel task: every image of every split is zero-padded to 32×32
/// and then shuffled by the task's fixed permutation (`out[i] = in[p[i]]`).
pub fn make_permuted_task(
    base: &BaseSplits,
    task_index: usize,
    seed: u64,
    eval_size: usize,
) -> Result<Task> {
    if base.data.dim() != 784 {
        return Err(Error::usage(format!(
            "permuted tasks need 28x28 inputs, got width {}",
            base.data.dim()
        )));
    }
    let perm = task_permutation(seed, task_index);
    let transform = |ds: &Dataset| {
        ds.map_inputs(vec![32, 32], |src, dst| {
            let mut buf = [0.0; 1024];
            pad_28_to_32(src, &mut buf);
            for (o, &p) in dst.iter_mut().zip(&perm) {
                *o = buf[p];
            }
        })
    };
    let (train, valid, test) = base.split()?;
    let splits = (transform(&train), transform(&valid), transform(&test));
    let classes = (0..base.data.num_classes()).collect();
    Ok(assemble(task_index, splits, classes, base.indices.clone(), eval_size))
}

/// Builds class-split tasks, refusing to reuse a class within one stream.
#[derive(Debug)]
pub struct SplitStreamBuilder<'a> {
    base: &'a BaseSplits,
    used: BTreeSet<usize>,
    next_id: usize,
    eval_size: usize,
}

impl<'a> SplitStreamBuilder<'a> {
    pub fn new(base: &'a BaseSplits, eval_size: usize) -> Self {
        SplitStreamBuilder {
            base,
            used: BTreeSet::new(),
            next_id: 0,
            eval_size,
        }
    }

    /// Next task restricted to `class_ids`, labels remapped to
    /// `0..class_ids.len()` in the given order.
    pub fn make_split_task(&mut self, class_ids: &[usize]) -> Result<Task> {
        let n_classes = self.base.data.num_classes();
        if class_ids.is_empty() {
            return Err(Error::usage("split task needs at least one class"));
        }
        let mut map = vec![None; n_classes];
        for (local, &c) in class_ids.iter().enumerate() {
            if c >= n_classes {
                return Err(Error::usage(format!("class {c} not in source")));
            }
            if self.used.contains(&c) || map[c].is_some() {
                return Err(Error::usage(format!("class {c} already used in this stream")));
            }
            map[c] = Some(local);
        }
        let (train, valid, test) = self.base.split()?;
        let keep = |ds_idx: &[usize]| -> Vec<usize> {
            ds_idx
                .iter()
                .copied()
                .filter(|&i| map[self.base.data.labels()[i]].is_some())
                .collect()
        };
        let source = SplitIndices {
            train: keep(&self.base.indices.train),
            valid: keep(&self.base.indices.valid),
            test: keep(&self.base.indices.test),
        };
        let k = class_ids.len();
        let splits = (
            train.relabel(&map, k)?,
            valid.relabel(&map, k)?,
            test.relabel(&map, k)?,
        );
        self.used.extend(class_ids.iter().copied());
        let id = self.next_id;
        self.next_id += 1;
        Ok(assemble(id, splits, class_ids.to_vec(), source, self.eval_size))
    }
}

/// Where task data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum StreamSource {
    /// Permuted-pixel stream over a 28×28 IDX image/label pair.
    Permuted { images: PathBuf, labels: PathBuf },
    /// Disjoint class subsets of an IDX pair; class order drawn from the
    /// stream seed.
    Split {
        images: PathBuf,
        labels: PathBuf,
        classes_per_task: usize,
    },
    /// Gaussian blobs with a per-task rotation of a shared mean layout.
    Synthetic {
        classes: usize,
        dim: usize,
        #[serde(default = "default_variance")]
        variance: f64,
    },
}

fn default_variance() -> f64 {
    0.25
}

fn default_eval_subset() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSpec {
    pub source: StreamSource,
    pub tasks: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    #[serde(default = "default_eval_subset")]
    pub eval_subset: usize,
    pub seed: u64,
}

impl StreamSpec {
    pub fn counts(&self) -> SplitCounts {
        SplitCounts {
            train: self.train,
            valid: self.valid,
            test: self.test,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks == 0 {
            return Err(Error::usage("stream needs at least one task"));
        }
        if self.train == 0 || self.valid == 0 || self.test == 0 {
            return Err(Error::usage("split sizes must be positive"));
        }
        if self.eval_subset == 0 {
            return Err(Error::usage("eval_subset must be positive"));
        }
        match &self.source {
            StreamSource::Split { classes_per_task, .. } if *classes_per_task == 0 => {
                Err(Error::usage("classes_per_task must be positive"))
            }
            StreamSource::Synthetic { classes, .. } if *classes < 2 => {
                Err(Error::usage("synthetic streams need at least 2 classes"))
            }
            StreamSource::Synthetic { dim, variance, .. } if *dim == 0 || *variance < 0.0 => {
                Err(Error::usage("synthetic dim must be positive and variance >= 0"))
            }
            _ => Ok(()),
        }
    }

    /// Head widths of the stream's tasks, known before any data is loaded
    /// for permuted and synthetic streams.
    pub fn head_widths(&self, tasks: &[Task]) -> Vec<usize> {
        tasks.iter().map(Task::num_classes).collect()
    }
}

fn resolve(path: &Path, data_dir: Option<&Path>) -> PathBuf {
    match data_dir {
        Some(dir) if path.is_relative() => dir.join(path),
        _ => path.to_path_buf(),
    }
}

/// Materialises every task of `spec`. Relative IDX paths are resolved
/// against `data_dir` when given.
pub fn build_stream(spec: &StreamSpec, data_dir: Option<&Path>) -> Result<Vec<Task>> {
    spec.validate()?;
    match &spec.source {
        StreamSource::Permuted { images, labels } => {
            let data = load_idx(&resolve(images, data_dir), &resolve(labels, data_dir))?;
            let base = BaseSplits::new(data, spec.counts(), spec.seed)?;
            (0..spec.tasks)
                .map(|t| make_permuted_task(&base, t, spec.seed, spec.eval_subset))
                .collect()
        }
        StreamSource::Split {
            images,
            labels,
            classes_per_task,
        } => {
            let data = load_idx(&resolve(images, data_dir), &resolve(labels, data_dir))?;
            let n_classes = data.num_classes();
            if classes_per_task * spec.tasks > n_classes {
                return Err(Error::usage(format!(
                    "{} tasks of {classes_per_task} classes exceed the {n_classes} available",
                    spec.tasks
                )));
            }
            let base = BaseSplits::new(data, spec.counts(), spec.seed)?;
            let order = Rng::for_stream(spec.seed, CLASS_ORDER_STREAM).permutation(n_classes);
            let mut builder = SplitStreamBuilder::new(&base, spec.eval_subset);
            order
                .chunks(*classes_per_task)
                .take(spec.tasks)
                .map(|c| builder.make_split_task(c))
                .collect()
        }
        StreamSource::Synthetic {
            classes,
            dim,
            variance,
        } => make_synthetic_stream(&SyntheticSpec {
            tasks: spec.tasks,
            classes: *classes,
            dim: *dim,
            variance: *variance,
            counts: spec.counts(),
            eval_subset: spec.eval_subset,
            seed: spec.seed,
        }),
    }
}
