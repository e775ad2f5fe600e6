use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::train::{finish_report, fit, Run};
use super::{TrainConfig, TrainReport};
use crate::distill::{
    distill_total_loss, fitnet_loss, kd_soft_loss, lsp_loss, DistillConfig, DistillMode,
};
use crate::error::{Error, Result};
use crate::graph::{laplacian_pe, NodeDataset, SignRule};
use crate::layers::{glorot, ArchSpec, GnnModel, Module};
use crate::tensor::{Tape, Var};

/// Student architecture: backbone, attention heads and PE width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentSpec {
    pub arch: ArchSpec,
    pub n_heads: usize,
    pub m: usize,
}

impl StudentSpec {
    /// A student with the teacher's head count and PE width.
    pub fn like_teacher(arch: ArchSpec, teacher: &GnnModel) -> Result<Self> {
        let layer = teacher
            .attention_layer()
            .ok_or_else(|| Error::Config("teacher has no attention layer".into()))?;
        Ok(Self {
            arch,
            n_heads: layer.n_heads(),
            m: layer.pe_dim(),
        })
    }
}

/// Freshly initialized student for `seed`. Reuses the teacher's positional
/// encoding when the widths agree, since both run on the same graph.
pub fn build_student(teacher: &GnnModel, spec: &StudentSpec, ds: &NodeDataset, seed: u64) -> Result<GnnModel> {
    let pe = match &teacher.enhancement {
        Some(e) if e.pe.dim() == spec.m && e.pe.n_nodes() == ds.n_nodes() => e.pe.clone(),
        _ => laplacian_pe(ds.graph(), spec.m, SignRule::LargestPositive)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GnnModel::with_attention(
        &spec.arch,
        ds.feature_dim(),
        ds.output_width(),
        pe,
        spec.n_heads,
        &mut rng,
    )
}

/// Trains a fresh student against a frozen teacher.
pub fn distill_student(
    teacher: &GnnModel,
    spec: &StudentSpec,
    ds: &NodeDataset,
    dcfg: &DistillConfig,
    cfg: &TrainConfig,
) -> Result<(GnnModel, TrainReport)> {
    let student = build_student(teacher, spec, ds, cfg.seed)?;
    distill_from(student, teacher, ds, dcfg, cfg)
}

/// Trains `student` against the frozen `teacher` with the loss selected by
/// `dcfg.mode`. The teacher is run once; its outputs are constants.
pub fn distill_from(
    mut student: GnnModel,
    teacher: &GnnModel,
    ds: &NodeDataset,
    dcfg: &DistillConfig,
    cfg: &TrainConfig,
) -> Result<(GnnModel, TrainReport)> {
    cfg.validate()?;
    dcfg.validate()?;
    let started = Instant::now();
    if teacher.d_in() != ds.feature_dim() || student.d_in() != ds.feature_dim() {
        return Err(Error::Config("teacher, student and dataset feature widths differ".into()));
    }
    let attention = dcfg.mode == DistillMode::Attention;
    if attention {
        let t = teacher
            .attention_layer()
            .ok_or_else(|| Error::Config("attention distillation needs a teacher with an attention layer".into()))?;
        let s = student
            .attention_layer()
            .ok_or_else(|| Error::Config("attention distillation needs a student with an attention layer".into()))?;
        if t.n_heads() != s.n_heads() {
            return Err(Error::Config(format!(
                "teacher has {} heads, student has {}",
                t.n_heads(),
                s.n_heads()
            )));
        }
    }

    let run = Run::new(ds);
    let mut frozen = teacher.clone();
    if let Some(e) = &mut frozen.enhancement {
        e.layer.capture = attention;
    }
    let (t_logits, t_hidden, t_record) = frozen.infer(&run.ctx, ds.features())?;
    if let Some(e) = &mut student.enhancement {
        e.layer.capture = attention;
    }

    let mut extra = Vec::new();
    if dcfg.mode == DistillMode::Fitnet {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_f17e);
        extra.push(glorot(student.hidden_width(), teacher.hidden_width(), &mut rng));
    }
    let all_nodes = vec![true; ds.n_nodes()];
    let kernel = dcfg.kernel();

    let objective = |tape: &mut Tape, out: &crate::layers::ModelOutput, extra: &[Var]| {
        let task = run.task_loss(tape, out.logits)?;
        let mut parts = vec![("L_CE", task)];
        let total = match dcfg.mode {
            DistillMode::None => task,
            DistillMode::Kd => {
                let kd = kd_soft_loss(tape, &t_logits, out.logits, dcfg.kd_temperature)?;
                parts.push(("L_KD", kd));
                let hard = tape.scale(task, dcfg.kd_hard_weight);
                let soft = tape.scale(kd, dcfg.kd_soft_weight);
                tape.add(hard, soft)?
            }
            DistillMode::Fitnet => {
                let fit = fitnet_loss(tape, out.hidden, &t_hidden, extra[0], &all_nodes)?;
                parts.push(("L_FIT", fit));
                let w = tape.scale(fit, dcfg.fitnet_weight);
                tape.add(task, w)?
            }
            DistillMode::Lsp => {
                let lsp = lsp_loss(tape, out.hidden, &t_hidden, ds.graph(), kernel)?;
                parts.push(("L_LSP", lsp));
                let w = tape.scale(lsp, dcfg.lsp_weight);
                tape.add(task, w)?
            }
            DistillMode::Attention => {
                let rec_t = t_record.as_ref().expect("teacher record captured");
                let rec_s = out.attention.as_ref().expect("student record captured");
                let (total, terms) = distill_total_loss(tape, task, rec_t, rec_s, dcfg)?;
                parts.extend(terms);
                total
            }
        };
        Ok((total, parts))
    };

    let scales = vec![1.0; student.params().len()];
    let outcome = fit(&mut student, &mut extra, scales, cfg, &run, &objective)?;
    if let Some(e) = &mut student.enhancement {
        e.layer.capture = false;
    }
    let config = json!({ "train": cfg, "distill": dcfg });
    let mut report = finish_report(&student, ds, outcome, &dcfg.method_label(), cfg.seed, config, started)?;
    if attention {
        report.alpha = Some(dcfg.alpha);
    }
    Ok((student, report))
}

/// Baseline and distilled test metric of one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedPair {
    pub seed: u64,
    pub baseline: f64,
    pub distilled: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub baseline_metric: f64,
    pub distilled_metric: f64,
    /// Mean over seeds of distilled minus undistilled metric.
    pub improvement: f64,
    pub per_seed: Vec<SeedPair>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

fn undistilled(teacher: &GnnModel, spec: &StudentSpec, ds: &NodeDataset, cfg: &TrainConfig, seeds: &[u64]) -> Result<Vec<f64>> {
    let none = DistillConfig {
        mode: DistillMode::None,
        alpha: 0.0,
        ..Default::default()
    };
    seeds
        .par_iter()
        .map(|&seed| {
            let cfg = TrainConfig { seed, ..cfg.clone() };
            distill_student(teacher, spec, ds, &none, &cfg).map(|(_, r)| r.test_metric)
        })
        .collect()
}

/// For each α, distills students over `seeds` and compares them with
/// undistilled students of the same seeds. Runs fan out over the rayon pool;
/// each run is deterministic, so results do not depend on the thread count.
pub fn alpha_sweep(
    teacher: &GnnModel,
    spec: &StudentSpec,
    ds: &NodeDataset,
    alphas: &[f64],
    dcfg: &DistillConfig,
    cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    if alphas.is_empty() || seeds.is_empty() {
        return Err(Error::Config("alpha sweep needs at least one alpha and one seed".into()));
    }
    let baseline = undistilled(teacher, spec, ds, cfg, seeds)?;
    let jobs: Vec<(usize, u64)> = (0..alphas.len())
        .flat_map(|a| seeds.iter().map(move |&s| (a, s)))
        .collect();
    let distilled: Vec<f64> = jobs
        .par_iter()
        .map(|&(a, seed)| {
            let d = DistillConfig {
                mode: DistillMode::Attention,
                alpha: alphas[a],
                ..dcfg.clone()
            };
            let cfg = TrainConfig { seed, ..cfg.clone() };
            distill_student(teacher, spec, ds, &d, &cfg).map(|(_, r)| r.test_metric)
        })
        .collect::<Result<_>>()?;

    Ok(alphas
        .iter()
        .enumerate()
        .map(|(a, &alpha)| {
            let per_seed: Vec<SeedPair> = seeds
                .iter()
                .enumerate()
                .map(|(k, &seed)| SeedPair {
                    seed,
                    baseline: baseline[k],
                    distilled: distilled[a * seeds.len() + k],
                })
                .collect();
            SweepRow {
                alpha,
                baseline_metric: mean(per_seed.iter().map(|p| p.baseline)),
                distilled_metric: mean(per_seed.iter().map(|p| p.distilled)),
                improvement: mean(per_seed.iter().map(|p| p.distilled - p.baseline)),
                per_seed,
            }
        })
        .collect())
}

/// One method of a baseline comparison, one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub alpha: Option<f64>,
    pub seed: u64,
    pub param_count: usize,
    pub baseline_metric: f64,
    pub final_metric: f64,
}

/// Runs KD, FitNet, LSP and attention distillation on the same teacher,
/// student architecture, dataset and seeds. `dcfg` supplies the shared
/// hyperparameters; its mode is ignored.
pub fn compare_baselines(
    teacher: &GnnModel,
    spec: &StudentSpec,
    ds: &NodeDataset,
    dcfg: &DistillConfig,
    cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<Vec<ComparisonRow>> {
    if seeds.is_empty() {
        return Err(Error::Config("comparison needs at least one seed".into()));
    }
    let baseline = undistilled(teacher, spec, ds, cfg, seeds)?;
    let modes = [DistillMode::Kd, DistillMode::Fitnet, DistillMode::Lsp, DistillMode::Attention];
    let jobs: Vec<(DistillMode, usize)> = modes
        .iter()
        .flat_map(|&m| (0..seeds.len()).map(move |k| (m, k)))
        .collect();
    jobs.par_iter()
        .map(|&(mode, k)| {
            let d = DistillConfig { mode, ..dcfg.clone() };
            let cfg = TrainConfig { seed: seeds[k], ..cfg.clone() };
            let (_, r) = distill_student(teacher, spec, ds, &d, &cfg)?;
            Ok(ComparisonRow {
                method: r.method.clone(),
                alpha: r.alpha,
                seed: seeds[k],
                param_count: r.param_count,
                baseline_metric: baseline[k],
                final_metric: r.test_metric,
            })
        })
        .collect()
}
