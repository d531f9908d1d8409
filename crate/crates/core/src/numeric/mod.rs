//! Deterministic micro neural-network engine.

mod matrix;
mod mlp;
mod optim;
mod rng;

pub use matrix::Matrix;
pub use mlp::{softmax_rows, Activation, Batch, GradMode, LayerShape, MlpModel, ParamVector};
pub use optim::{sgd_momentum_step, SgdMomentum};
pub use rng::Rng;
