use crate::error::{Error, Result};

/// One heavy-ball step: `v' = momentum * v + g`, `θ' = θ - lr * v'`.
pub fn sgd_momentum_step(
    params: &mut [f64],
    grad: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if params.len() != grad.len() || params.len() != velocity.len() {
        return Err(Error::shape(format!(
            "sgd step with lengths params={} grad={} velocity={}",
            params.len(),
            grad.len(),
            velocity.len()
        )));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite gradient at parameter {i} ({})",
            grad[i]
        )));
    }
    for ((p, &g), v) in params.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}

/// SGD with momentum holding its own velocity buffer.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl SgdMomentum {
    pub fn new(n: usize, lr: f64, momentum: f64) -> Self {
        SgdMomentum {
            lr,
            momentum,
            velocity: vec![0.0; n],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        sgd_momentum_step(params, grad, &mut self.velocity, self.lr, self.momentum)
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }
}
