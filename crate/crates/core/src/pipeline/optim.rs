use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

/// First and second moment estimates for Adam, one pair per tensor.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(shapes: &[&[usize]]) -> Self {
        Self {
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. `lr_scales[k]` multiplies the learning
/// rate of tensor `k`.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
    lr_scales: &[f64],
    (beta1, beta2, eps): (f64, f64, f64),
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != lr_scales.len() {
        return Err(Error::Contract(format!(
            "adam_step: {} params, {} grads, {} moments, {} scales",
            params.len(),
            grads.len(),
            state.m.len(),
            lr_scales.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (k, p) in params.iter_mut().enumerate() {
        let g = grads[k].data();
        let step = lr * lr_scales[k];
        let m = state.m[k].data_mut();
        for (mi, gi) in m.iter_mut().zip(g) {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
        }
        let v = state.v[k].data_mut();
        for (vi, gi) in v.iter_mut().zip(g) {
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
        }
        if step == 0.0 {
            continue;
        }
        let (m, v) = (state.m[k].data(), state.v[k].data());
        for ((w, mi), vi) in p.data_mut().iter_mut().zip(m).zip(v) {
            *w -= step * (mi / c1) / ((vi / c2).sqrt() + eps);
        }
    }
    Ok(())
}

/// SGD with classical momentum; `velocity` holds one buffer per tensor.
pub fn sgd_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    velocity: &mut [Tensor],
    lr: f64,
    lr_scales: &[f64],
    momentum: f64,
) {
    for (k, p) in params.iter_mut().enumerate() {
        let step = lr * lr_scales[k];
        for ((w, vel), g) in p
            .data_mut()
            .iter_mut()
            .zip(velocity[k].data_mut())
            .zip(grads[k].data())
        {
            *vel = momentum * *vel + g;
            *w -= step * *vel;
        }
    }
}

/// Optimizer bound to a fixed list of tensors, with L2 weight decay folded
/// into the gradient.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    weight_decay: f64,
    adam: (f64, f64, f64),
    momentum: f64,
    lr_scales: Vec<f64>,
    state: AdamState,
}

impl Optimizer {
    pub fn new(cfg: &super::TrainConfig, shapes: &[&[usize]], lr_scales: Vec<f64>) -> Self {
        Self {
            kind: cfg.optimizer,
            lr: cfg.learning_rate,
            weight_decay: cfg.weight_decay,
            adam: (cfg.beta1, cfg.beta2, cfg.eps),
            momentum: cfg.momentum,
            lr_scales,
            state: AdamState::new(shapes),
        }
    }

    pub fn step(&mut self, mut params: Vec<&mut Tensor>, mut grads: Vec<Tensor>) -> Result<()> {
        if self.weight_decay != 0.0 {
            for (g, p) in grads.iter_mut().zip(params.iter()) {
                for (gi, wi) in g.data_mut().iter_mut().zip(p.data()) {
                    *gi += self.weight_decay * wi;
                }
            }
        }
        match self.kind {
            OptimizerKind::Adam => adam_step(
                &mut params,
                &grads,
                &mut self.state,
                self.lr,
                &self.lr_scales,
                self.adam,
            ),
            OptimizerKind::Sgd => {
                sgd_step(
                    &mut params,
                    &grads,
                    &mut self.state.m,
                    self.lr,
                    &self.lr_scales,
                    self.momentum,
                );
                Ok(())
            }
        }
    }
}
