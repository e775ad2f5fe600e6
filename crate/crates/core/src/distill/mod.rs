//! Training and distillation losses.
//!
//! Every loss takes the student side as tape variables and the teacher side
//! as plain tensors or captured records, so nothing ever flows back into the
//! teacher.

mod attention;
mod losses;

pub use attention::{
    attention_map_kl, attention_map_kl_value, record_vars, relation_kl, relation_kl_value,
    Relation,
};
pub use losses::{bce_multilabel, cross_entropy, fitnet_loss, kd_soft_loss, lsp_kernel, lsp_loss, LspKernel};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{AttentionRecord, AttentionVars};
use crate::tensor::{Tape, Var};

/// Which extra supervision a student receives from its teacher.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistillMode {
    /// Task loss only.
    None,
    /// Temperature-softened logit matching.
    Kd,
    /// Hidden-representation regression through a trainable adapter.
    Fitnet,
    /// Kernel-similarity neighborhood matching.
    Lsp,
    /// Attention-map plus relation matching.
    #[default]
    #[serde(alias = "attn")]
    Attention,
}

impl DistillMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DistillMode::None => "none",
            DistillMode::Kd => "kd",
            DistillMode::Fitnet => "fitnet",
            DistillMode::Lsp => "lsp",
            DistillMode::Attention => "attention",
        }
    }
}

impl fmt::Display for DistillMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DistillMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(DistillMode::None),
            "kd" => Ok(DistillMode::Kd),
            "fitnet" => Ok(DistillMode::Fitnet),
            "lsp" => Ok(DistillMode::Lsp),
            "attention" | "attn" => Ok(DistillMode::Attention),
            other => Err(Error::Config(format!("unknown distillation mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    #[default]
    Rbf,
    Poly,
    Linear,
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rbf" => Ok(KernelKind::Rbf),
            "poly" => Ok(KernelKind::Poly),
            "linear" => Ok(KernelKind::Linear),
            other => Err(Error::Config(format!("unknown kernel {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub mode: DistillMode,
    /// Weight of the attention terms in attention mode.
    pub alpha: f64,
    pub relations: Vec<Relation>,
    pub kd_temperature: f64,
    pub kd_soft_weight: f64,
    pub kd_hard_weight: f64,
    pub fitnet_weight: f64,
    pub lsp_weight: f64,
    pub lsp_kernel: KernelKind,
    pub lsp_sigma: f64,
    pub lsp_degree: u32,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            mode: DistillMode::Attention,
            alpha: 0.1,
            relations: vec![Relation::Value],
            kd_temperature: 2.0,
            kd_soft_weight: 0.8,
            kd_hard_weight: 0.2,
            fitnet_weight: 1.0,
            lsp_weight: 100.0,
            lsp_kernel: KernelKind::Rbf,
            lsp_sigma: 1.0,
            lsp_degree: 2,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("alpha", self.alpha),
            ("kd_soft_weight", self.kd_soft_weight),
            ("kd_hard_weight", self.kd_hard_weight),
            ("fitnet_weight", self.fitnet_weight),
            ("lsp_weight", self.lsp_weight),
        ];
        for (name, w) in weights {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite value ≥ 0, got {w}")));
            }
        }
        if !(self.kd_temperature > 0.0 && self.kd_temperature.is_finite()) {
            return Err(Error::Config(format!(
                "kd_temperature must be > 0, got {}",
                self.kd_temperature
            )));
        }
        let mut seen = self.relations.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.relations.len() {
            return Err(Error::Config("relations lists a projection twice".into()));
        }
        if self.lsp_kernel == KernelKind::Rbf && !(self.lsp_sigma > 0.0) {
            return Err(Error::Config(format!("lsp_sigma must be > 0, got {}", self.lsp_sigma)));
        }
        if self.lsp_kernel == KernelKind::Poly && self.lsp_degree == 0 {
            return Err(Error::Config("lsp_degree must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn kernel(&self) -> LspKernel {
        match self.lsp_kernel {
            KernelKind::Rbf => LspKernel::Rbf {
                sigma: self.lsp_sigma,
            },
            KernelKind::Poly => LspKernel::Poly {
                degree: self.lsp_degree,
            },
            KernelKind::Linear => LspKernel::Linear,
        }
    }

    /// Short method label, e.g. `a+v` or `kd`.
    pub fn method_label(&self) -> String {
        match self.mode {
            DistillMode::Attention => {
                let mut s = String::from("a");
                for r in &self.relations {
                    s.push('+');
                    s.push_str(match r {
                        Relation::Value => "v",
                        Relation::Query => "q",
                        Relation::Key => "k",
                    });
                }
                s
            }
            other => other.as_str().to_owned(),
        }
    }
}

/// Named loss terms of one evaluation, in a fixed order.
pub type LossParts = Vec<(&'static str, Var)>;

/// `task + α·(L_A + Σ_r L_r)` over the configured relation set. Returns the
/// total and the unweighted attention terms.
pub fn distill_total_loss(
    tape: &mut Tape,
    task: Var,
    teacher: &AttentionRecord,
    student: &AttentionVars,
    cfg: &DistillConfig,
) -> Result<(Var, LossParts)> {
    cfg.validate()?;
    let l_a = attention_map_kl(tape, teacher, student)?;
    let mut parts = vec![("L_A", l_a)];
    let mut attn = l_a;
    for &r in &cfg.relations {
        let l_r = relation_kl(tape, teacher, student, r)?;
        parts.push((r.column(), l_r));
        attn = tape.add(attn, l_r)?;
    }
    if cfg.alpha == 0.0 {
        return Ok((task, parts));
    }
    let weighted = tape.scale(attn, cfg.alpha);
    Ok((tape.add(task, weighted)?, parts))
}

/// Value form of [`distill_total_loss`] for captured records.
pub fn distill_total_loss_value(
    task: f64,
    teacher: &AttentionRecord,
    student: &AttentionRecord,
    cfg: &DistillConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    let t = tape.constant(crate::tensor::Tensor::scalar(task));
    let s = record_vars(&mut tape, student);
    let (total, _) = distill_total_loss(&mut tape, t, teacher, &s, cfg)?;
    Ok(tape.value(total).item())
}
