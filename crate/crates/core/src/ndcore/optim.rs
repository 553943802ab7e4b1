use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{contract, dimension, Result};
use crate::ndcore::mlp::MlpModel;
use crate::ndcore::tensor::Tensor;

/// Heavy-ball SGD state plus the cosine schedule position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    velocity: Vec<Vec<f64>>,
    pub momentum: f64,
    pub base_lr: f64,
    pub step: usize,
    pub total_steps: usize,
}

impl OptimState {
    pub const DEFAULT_MOMENTUM: f64 = 0.9;
    pub const DEFAULT_LR: f64 = 0.03;

    pub fn new(params: &[&Tensor], momentum: f64, base_lr: f64, total_steps: usize) -> Self {
        Self {
            velocity: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            momentum,
            base_lr,
            step: 0,
            total_steps,
        }
    }

    pub fn for_model(model: &MlpModel, momentum: f64, base_lr: f64, total_steps: usize) -> Self {
        Self::new(&model.params(), momentum, base_lr, total_steps)
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    /// Learning rate for the current step under [`cosine_lr`].
    pub fn current_lr(&self) -> Result<f64> {
        cosine_lr(self.base_lr, self.step, self.total_steps)
    }
}

/// `eta0 * cos(7 pi k / (16 K))`: decays to about 0.195 eta0 at `k = K`.
pub fn cosine_lr(eta0: f64, k: usize, total: usize) -> Result<f64> {
    contract!(total > 0, "cosine_lr needs K > 0");
    contract!(k <= total, "cosine_lr step {k} beyond K = {total}");
    Ok(eta0 * (7.0 * PI * k as f64 / (16.0 * total as f64)).cos())
}

/// `v <- momentum * v + g; theta <- theta - lr * v`, then clears gradients.
pub fn sgd_step(params: &mut [&mut Tensor], opt: &mut OptimState, lr: f64) -> Result<()> {
    dimension!(
        params.len() == opt.velocity.len(),
        "optimizer tracks {} tensors, got {}",
        opt.velocity.len(),
        params.len()
    );
    for (i, p) in params.iter().enumerate() {
        contract!(p.grad().is_some(), "parameter {i} has no gradient");
        dimension!(
            p.len() == opt.velocity[i].len(),
            "parameter {i} changed size"
        );
    }
    for (p, v) in params.iter_mut().zip(opt.velocity.iter_mut()) {
        let g = p.take_grad().expect("checked above");
        for ((w, vel), g) in p.data_mut().iter_mut().zip(v.iter_mut()).zip(g) {
            *vel = opt.momentum * *vel + g;
            *w -= lr * *vel;
        }
    }
    opt.step = (opt.step + 1).min(opt.total_steps);
    Ok(())
}
