//! Training loops: pretraining, two-stage enhancement, distillation and the
//! experiment sweeps built on them.

mod distill;
mod metrics;
mod optim;
mod train;

pub use distill::{
    alpha_sweep, build_student, compare_baselines, distill_from, distill_student, ComparisonRow,
    SeedPair, StudentSpec, SweepRow,
};
pub use metrics::{accuracy, evaluate, metric, micro_f1, Targets};
pub use optim::{adam_step, sgd_step, AdamState, Optimizer, OptimizerKind};
pub use train::{enhance_with_gkedm, pretrain_gcn, EpochRow, TrainReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Learning-rate multiplier for the retained backbone during
    /// enhancement fine-tuning. Zero freezes it.
    pub backbone_lr_scale: f64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Epochs without a validation improvement before stopping; 0 never stops
    /// early.
    pub patience: usize,
    /// Keep the pretrained classifier head at enhancement time instead of a
    /// fresh one. Needs matching widths.
    pub transplant_head: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 1e-2,
            backbone_lr_scale: 0.1,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            patience: 50,
            transplant_head: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::Config(format!("{what} out of range: {v}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", self.learning_rate);
        }
        if !(self.backbone_lr_scale >= 0.0 && self.backbone_lr_scale.is_finite()) {
            return bad("backbone_lr_scale", self.backbone_lr_scale);
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return bad("beta1", self.beta1);
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return bad("beta2", self.beta2);
        }
        if !(self.eps > 0.0) {
            return bad("eps", self.eps);
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", self.momentum);
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay", self.weight_decay);
        }
        Ok(())
    }
}
