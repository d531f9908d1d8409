use std::ops::{Deref, DerefMut, Range};

use serde::{Deserialize, Serialize};

use super::matrix::{gemm, View};
use super::{Matrix, Rng};
use crate::error::{Error, Result};

/// Flat parameter vector. Index order is the alignment contract shared with
/// importance vectors and snapshots: trunk layers in order, then heads in
/// order; within a layer the `fan_in x fan_out` weights row-major, then the
/// `fan_out` biases.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(n: usize) -> Self {
        ParamVector(vec![0.0; n])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

/// Position and shape of one dense layer inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    pub activation: Activation,
    offset: usize,
}

impl LayerShape {
    pub fn param_count(&self) -> usize {
        self.fan_in * self.fan_out + self.fan_out
    }

    pub fn weight_range(&self) -> Range<usize> {
        self.offset..self.offset + self.fan_in * self.fan_out
    }

    pub fn bias_range(&self) -> Range<usize> {
        let start = self.offset + self.fan_in * self.fan_out;
        start..start + self.fan_out
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.param_count()
    }
}

/// How per-sample gradients are reduced over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    /// Σ_s g_s, the ordinary batch gradient.
    Sum,
    /// Σ_s g_s², per coordinate.
    Squared,
    /// Σ_s |g_s|, per coordinate.
    Abs,
}

/// A minibatch addressed to one output head.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub head_id: usize,
}

/// Multi-head MLP: a shared trunk of dense layers followed by one linear
/// head per task. All parameters live in a single [`ParamVector`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    input_dim: usize,
    trunk: Vec<LayerShape>,
    heads: Vec<LayerShape>,
    params: ParamVector,
}

impl MlpModel {
    /// All-zero model with the given trunk `(width, activation)` list and
    /// head widths.
    pub fn zeros(
        input_dim: usize,
        trunk: &[(usize, Activation)],
        head_widths: &[usize],
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::usage("input dimension must be positive"));
        }
        if head_widths.is_empty() {
            return Err(Error::usage("model needs at least one head"));
        }
        if trunk.iter().any(|&(w, _)| w == 0) || head_widths.contains(&0) {
            return Err(Error::usage("layer widths must be positive"));
        }
        let mut offset = 0;
        let mut fan_in = input_dim;
        let mut trunk_shapes = Vec::with_capacity(trunk.len());
        for &(fan_out, activation) in trunk {
            let layer = LayerShape {
                fan_in,
                fan_out,
                activation,
                offset,
            };
            offset += layer.param_count();
            fan_in = fan_out;
            trunk_shapes.push(layer);
        }
        let mut heads = Vec::with_capacity(head_widths.len());
        for &fan_out in head_widths {
            let layer = LayerShape {
                fan_in,
                fan_out,
                activation: Activation::Identity,
                offset,
            };
            offset += layer.param_count();
            heads.push(layer);
        }
        Ok(MlpModel {
            input_dim,
            trunk: trunk_shapes,
            heads,
            params: ParamVector::zeros(offset),
        })
    }

    /// ReLU trunk with the given hidden widths, Glorot-uniform weights and
    /// zero biases.
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        head_widths: &[usize],
        rng: &mut Rng,
    ) -> Result<Self> {
        let trunk: Vec<_> = hidden.iter().map(|&w| (w, Activation::Relu)).collect();
        let mut model = Self::zeros(input_dim, &trunk, head_widths)?;
        model.glorot_init(rng);
        Ok(model)
    }

    /// Weights uniform in ±sqrt(6 / (fan_in + fan_out)), biases zero. Layers
    /// are visited in flat order so the draw sequence is fixed.
    pub fn glorot_init(&mut self, rng: &mut Rng) {
        let layers: Vec<LayerShape> = self.trunk.iter().chain(&self.heads).cloned().collect();
        for layer in layers {
            let limit = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            for w in &mut self.params[layer.weight_range()] {
                *w = rng.uniform_in(-limit, limit);
            }
            self.params[layer.bias_range()].fill(0.0);
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    pub fn trunk(&self) -> &[LayerShape] {
        &self.trunk
    }

    pub fn heads(&self) -> &[LayerShape] {
        &self.heads
    }

    pub fn head(&self, head: usize) -> Result<&LayerShape> {
        self.heads.get(head).ok_or(Error::UnknownHead {
            head,
            count: self.heads.len(),
        })
    }

    pub fn head_width(&self, head: usize) -> Result<usize> {
        Ok(self.head(head)?.fan_out)
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn flatten(&self) -> ParamVector {
        self.params.clone()
    }

    pub fn unflatten(&mut self, values: &ParamVector) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::shape(format!(
                "unflatten expects {} parameters, got {}",
                self.params.len(),
                values.len()
            )));
        }
        self.params.copy_from_slice(values);
        Ok(())
    }

    fn check_inputs(&self, inputs: &Matrix, head: usize) -> Result<()> {
        if inputs.cols() != self.input_dim {
            return Err(Error::shape(format!(
                "input width {} does not match model input {}",
                inputs.cols(),
                self.input_dim
            )));
        }
        self.head(head)?;
        Ok(())
    }

    fn layer_forward(&self, layer: &LayerShape, input: &Matrix) -> Matrix {
        let rows = input.rows();
        let mut out = Matrix::zeros(rows, layer.fan_out);
        let bias = &self.params[layer.bias_range()];
        for r in 0..rows {
            out.row_mut(r).copy_from_slice(bias);
        }
        let w = View::row_major(&self.params[layer.weight_range()], layer.fan_in, layer.fan_out);
        gemm(1.0, input.view(), w, 1.0, out.as_mut_slice());
        if layer.activation == Activation::Relu {
            out.as_mut_slice().iter_mut().for_each(|x| *x = x.max(0.0));
        }
        out
    }

    /// Trunk activations (one matrix per trunk layer) and head logits.
    fn forward_trace(&self, inputs: &Matrix, head: usize) -> Result<(Vec<Matrix>, Matrix)> {
        self.check_inputs(inputs, head)?;
        let mut acts: Vec<Matrix> = Vec::with_capacity(self.trunk.len());
        for layer in &self.trunk {
            let next = self.layer_forward(layer, acts.last().unwrap_or(inputs));
            acts.push(next);
        }
        let logits = self.layer_forward(&self.heads[head], acts.last().unwrap_or(inputs));
        Ok((acts, logits))
    }

    pub fn forward_logits(&self, inputs: &Matrix, head: usize) -> Result<Matrix> {
        Ok(self.forward_trace(inputs, head)?.1)
    }

    /// Argmax class per row.
    pub fn predict(&self, inputs: &Matrix, head: usize) -> Result<Vec<usize>> {
        let logits = self.forward_logits(inputs, head)?;
        Ok((0..logits.rows())
            .map(|r| {
                let row = logits.row(r);
                let mut best = 0;
                for (j, &z) in row.iter().enumerate() {
                    if z > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }

    fn accumulate_layer(
        &self,
        layer: &LayerShape,
        input: &Matrix,
        delta: &Matrix,
        mode: GradMode,
        out: &mut [f64],
    ) {
        let transform = |m: &Matrix| -> Matrix {
            let mut t = m.clone();
            match mode {
                GradMode::Sum => {}
                GradMode::Squared => t.as_mut_slice().iter_mut().for_each(|x| *x *= *x),
                GradMode::Abs => t.as_mut_slice().iter_mut().for_each(|x| *x = x.abs()),
            }
            t
        };
        // The per-sample weight gradient is the outer product a_s ⊗ δ_s, so
        // its elementwise square (or magnitude) is the outer product of the
        // squared (or absolute) factors and the batch reduction stays a GEMM.
        let (a, d) = match mode {
            GradMode::Sum => (None, None),
            _ => (Some(transform(input)), Some(transform(delta))),
        };
        let a = a.as_ref().unwrap_or(input);
        let d = d.as_ref().unwrap_or(delta);
        gemm(1.0, a.view().t(), d.view(), 1.0, &mut out[layer.weight_range()]);
        let gb = &mut out[layer.bias_range()];
        for r in 0..d.rows() {
            for (g, &x) in gb.iter_mut().zip(d.row(r)) {
                *g += x;
            }
        }
    }

    /// Backpropagates per-sample output gradients and reduces the resulting
    /// parameter gradients into `out` according to `mode`.
    ///
    /// `output_grad(row, logits, dlogits)` fills the gradient of the
    /// per-sample objective with respect to that sample's logits. Only the
    /// trunk and the addressed head are written; other heads are untouched.
    pub fn backprop<F>(
        &self,
        inputs: &Matrix,
        head: usize,
        mode: GradMode,
        out: &mut [f64],
        mut output_grad: F,
    ) -> Result<()>
    where
        F: FnMut(usize, &[f64], &mut [f64]),
    {
        if out.len() != self.params.len() {
            return Err(Error::shape(format!(
                "gradient buffer has {} entries, model has {}",
                out.len(),
                self.params.len()
            )));
        }
        let (acts, logits) = self.forward_trace(inputs, head)?;
        let mut delta = Matrix::zeros(logits.rows(), logits.cols());
        for r in 0..logits.rows() {
            output_grad(r, logits.row(r), delta.row_mut(r));
        }
        let head_layer = &self.heads[head];
        self.accumulate_layer(head_layer, acts.last().unwrap_or(inputs), &delta, mode, out);

        let mut upstream = head_layer;
        for l in (0..self.trunk.len()).rev() {
            // δ_l = (δ_{l+1} W_{l+1}^T) ⊙ act'(z_l)
            let layer = &self.trunk[l];
            let w = View::row_major(
                &self.params[upstream.weight_range()],
                upstream.fan_in,
                upstream.fan_out,
            );
            let mut next = Matrix::zeros(delta.rows(), layer.fan_out);
            gemm(1.0, delta.view(), w.t(), 0.0, next.as_mut_slice());
            if layer.activation == Activation::Relu {
                for (d, &a) in next.as_mut_slice().iter_mut().zip(acts[l].as_slice()) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            delta = next;
            let input = if l == 0 { inputs } else { &acts[l - 1] };
            self.accumulate_layer(layer, input, &delta, mode, out);
            upstream = layer;
        }
        Ok(())
    }

    /// Adds `scale * ∇ Σ_s −log p(label_s | x_s)` into `grad` and returns the
    /// summed (unscaled) loss.
    pub fn accumulate_ce_grad(
        &self,
        inputs: &Matrix,
        labels: &[usize],
        head: usize,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        if labels.len() != inputs.rows() {
            return Err(Error::shape(format!(
                "{} labels for {} inputs",
                labels.len(),
                inputs.rows()
            )));
        }
        let width = self.head_width(head)?;
        if let Some(&bad) = labels.iter().find(|&&y| y >= width) {
            return Err(Error::usage(format!(
                "label {bad} out of range for head {head} of width {width}"
            )));
        }
        let mut loss = 0.0;
        self.backprop(inputs, head, GradMode::Sum, grad, |r, z, d| {
            let y = labels[r];
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (dj, &zj) in d.iter_mut().zip(z) {
                *dj = (zj - max).exp();
                sum += *dj;
            }
            loss += (max - z[y]) + sum.ln();
            for dj in d.iter_mut() {
                *dj = *dj / sum * scale;
            }
            d[y] -= scale;
        })?;
        Ok(loss)
    }

    /// Mean cross-entropy over the batch and its gradient. Heads other than
    /// `batch.head_id` receive exactly zero gradient.
    pub fn ce_loss_and_grad(&self, batch: &Batch) -> Result<(f64, ParamVector)> {
        let n = batch.labels.len();
        if n == 0 {
            return Err(Error::usage("cross-entropy on an empty batch"));
        }
        let mut grad = ParamVector::zeros(self.param_count());
        let loss = self.accumulate_ce_grad(
            &batch.inputs,
            &batch.labels,
            batch.head_id,
            1.0 / n as f64,
            &mut grad,
        )?;
        Ok((loss / n as f64, grad))
    }

    /// Mean cross-entropy without the gradient.
    pub fn ce_loss(&self, inputs: &Matrix, labels: &[usize], head: usize) -> Result<f64> {
        if labels.is_empty() {
            return Err(Error::usage("cross-entropy on an empty batch"));
        }
        let logits = self.forward_logits(inputs, head)?;
        let width = logits.cols();
        let mut loss = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            if y >= width {
                return Err(Error::usage(format!("label {y} out of range {width}")));
            }
            let z = logits.row(r);
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = z.iter().map(|&v| (v - max).exp()).sum();
            loss += (max - z[y]) + sum.ln();
        }
        Ok(loss / labels.len() as f64)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        row.iter_mut().for_each(|x| *x /= sum);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn zero_model_gives_uniform_softmax_and_ln_c_loss() {
        let model = MlpModel::zeros(5, &[(4, Activation::Relu)], &[3, 7]).unwrap();
        let mut rng = Rng::seed_from(0);
        let x = random_matrix(6, 5, &mut rng);
        for (head, c) in [(0, 3usize), (1, 7)] {
            let p = softmax_rows(&model.forward_logits(&x, head).unwrap());
            for v in p.as_slice() {
                assert!((v - 1.0 / c as f64).abs() < 1e-15);
            }
            let batch = Batch {
                inputs: x.clone(),
                labels: vec![0; 6],
                head_id: head,
            };
            let (loss, _) = model.ce_loss_and_grad(&batch).unwrap();
            assert!((loss - (c as f64).ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn identity_model_passes_nonnegative_input_through() {
        let d = 4;
        let mut model = MlpModel::zeros(d, &[(d, Activation::Relu)], &[d]).unwrap();
        let trunk_w = model.trunk()[0].weight_range();
        let head_w = model.heads()[0].weight_range();
        let eye = Matrix::identity(d);
        model.params_mut()[trunk_w].copy_from_slice(eye.as_slice());
        model.params_mut()[head_w].copy_from_slice(eye.as_slice());
        let x = Matrix::from_rows(&[vec![0.0, 1.0, 2.5, 3.0], vec![0.5, 0.0, 0.0, 9.0]]).unwrap();
        assert_eq!(model.forward_logits(&x, 0).unwrap(), x);
    }

    #[test]
    fn saturated_correct_logits_have_vanishing_loss() {
        let mut model = MlpModel::zeros(1, &[], &[2]).unwrap();
        let b = model.heads()[0].bias_range();
        let x = Matrix::from_rows(&[vec![0.0]]).unwrap();
        let mut last = f64::INFINITY;
        for margin in [1.0, 10.0, 40.0, 800.0] {
            model.params_mut()[b.clone()].copy_from_slice(&[margin, 0.0]);
            let loss = model.ce_loss(&x, &[0], 0).unwrap();
            assert!(loss >= 0.0 && loss <= last);
            last = loss;
        }
        assert!(last < 1e-300);
    }

    #[test]
    fn errors_for_bad_shapes_heads_and_labels() {
        let model = MlpModel::zeros(3, &[(2, Activation::Relu)], &[2]).unwrap();
        let x = Matrix::zeros(2, 4);
        assert!(matches!(model.forward_logits(&x, 0), Err(Error::Shape(_))));
        let x = Matrix::zeros(2, 3);
        assert!(matches!(
            model.forward_logits(&x, 1),
            Err(Error::UnknownHead { head: 1, count: 1 })
        ));
        let empty = Batch {
            inputs: Matrix::zeros(0, 3),
            labels: vec![],
            head_id: 0,
        };
        assert!(matches!(model.ce_loss_and_grad(&empty), Err(Error::Usage(_))));
        let bad = Batch {
            inputs: x,
            labels: vec![0, 2],
            head_id: 0,
        };
        assert!(matches!(model.ce_loss_and_grad(&bad), Err(Error::Usage(_))));
    }

    #[test]
    fn inactive_heads_get_exactly_zero_gradient() {
        let mut rng = Rng::seed_from(9);
        let model = MlpModel::new(6, &[5, 4], &[3, 3, 2], &mut rng).unwrap();
        let batch = Batch {
            inputs: random_matrix(8, 6, &mut rng),
            labels: (0..8).map(|i| i % 3).collect(),
            head_id: 1,
        };
        let (_, grad) = model.ce_loss_and_grad(&batch).unwrap();
        for h in [0, 2] {
            assert!(grad[model.heads()[h].range()].iter().all(|&g| g == 0.0));
        }
        assert!(grad[model.heads()[1].range()].iter().any(|&g| g != 0.0));
    }

    #[test]
    fn parameter_count_of_permuted_mnist_network() {
        let model = MlpModel::zeros(
            1024,
            &[(400, Activation::Relu), (400, Activation::Relu)],
            &[10; 10],
        )
        .unwrap();
        let expected = (1024 * 400 + 400) + (400 * 400 + 400) + 10 * (400 * 10 + 10);
        assert_eq!(expected, 610_500);
        assert_eq!(model.param_count(), expected);
    }

    #[test]
    fn flatten_order_is_sensitive_to_head_order() {
        let mut rng = Rng::seed_from(4);
        let model = MlpModel::new(3, &[4], &[2, 2], &mut rng).unwrap();
        let mut swapped = model.clone();
        let (h0, h1) = (model.heads()[0].range(), model.heads()[1].range());
        let p = model.params().clone();
        swapped.params_mut()[h0.clone()].copy_from_slice(&p[h1.clone()]);
        swapped.params_mut()[h1].copy_from_slice(&p[h0]);
        assert_ne!(swapped.flatten(), model.flatten());
    }

    #[test]
    fn unflatten_rejects_wrong_length() {
        let mut model = MlpModel::zeros(3, &[], &[2]).unwrap();
        assert!(matches!(
            model.unflatten(&ParamVector::zeros(7)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn glorot_bounds_and_zero_bias() {
        let mut rng = Rng::seed_from(5);
        let model = MlpModel::new(10, &[6], &[4], &mut rng).unwrap();
        let layer = &model.trunk()[0];
        let limit = (6.0f64 / 16.0).sqrt();
        assert!(model.params()[layer.weight_range()]
            .iter()
            .all(|w| w.abs() <= limit));
        assert!(model.params()[layer.bias_range()].iter().all(|&b| b == 0.0));
    }
}
