use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::metrics::{metric, Targets};
use super::optim::Optimizer;
use super::{evaluate, TrainConfig};
use crate::distill::{bce_multilabel, cross_entropy};
use crate::error::{Error, Result};
use crate::graph::{laplacian_pe, NodeDataset, SignRule, Split};
use crate::layers::{
    ArchSpec, ClassifierHead, Enhancement, GkedmAttentionLayer, GnnModel, GraphContext, Module,
    ModelOutput,
};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    /// Loss terms in the order of [`TrainReport::component_names`].
    pub components: Vec<f64>,
}

/// Everything a training run reports. Wall time is kept in memory only so
/// that serialized reports are reproducible byte for byte.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub model: String,
    pub dataset: String,
    pub method: String,
    pub alpha: Option<f64>,
    pub seed: u64,
    pub param_count: usize,
    pub component_names: Vec<String>,
    pub rows: Vec<EpochRow>,
    pub best_epoch: Option<usize>,
    pub best_val_metric: Option<f64>,
    pub test_metric: f64,
    /// Reference metric the run is compared against, if any.
    pub baseline_metric: Option<f64>,
    pub config: serde_json::Value,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl TrainReport {
    pub fn improvement(&self) -> Option<f64> {
        self.baseline_metric.map(|b| self.test_metric - b)
    }

    /// Per-epoch table: `epoch,train_loss,val_metric,<components>`.
    pub fn epochs_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["epoch".to_owned(), "train_loss".into(), "val_metric".into()];
        header.extend(self.component_names.iter().cloned());
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![
                row.epoch.to_string(),
                row.train_loss.to_string(),
                row.val_metric.to_string(),
            ];
            rec.extend(row.components.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Contract(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Loss terms returned by a training objective, in report order.
pub(crate) type Objective<'a> =
    dyn Fn(&mut Tape, &ModelOutput, &[Var]) -> Result<(Var, Vec<(&'static str, Var)>)> + 'a;

pub(crate) struct Run<'a> {
    pub ds: &'a NodeDataset,
    pub ctx: GraphContext,
    pub targets: Targets,
    pub train_mask: Vec<bool>,
    pub val_mask: Vec<bool>,
}

impl<'a> Run<'a> {
    pub fn new(ds: &'a NodeDataset) -> Self {
        Self {
            ds,
            ctx: GraphContext::new(ds.graph()),
            targets: Targets::from_labels(ds.labels()),
            train_mask: ds.mask(Split::Train),
            val_mask: ds.mask(Split::Val),
        }
    }

    pub fn task_loss(&self, tape: &mut Tape, logits: Var) -> Result<Var> {
        match &self.targets {
            Targets::Classes(c) => cross_entropy(tape, logits, c, &self.train_mask),
            Targets::Multi(y) => bce_multilabel(tape, logits, y, &self.train_mask),
        }
    }
}

pub(crate) struct FitOutcome {
    pub rows: Vec<EpochRow>,
    pub component_names: Vec<String>,
    pub best: Option<(usize, f64)>,
}

/// Full-batch training with early stopping on the validation metric. The
/// model ends up holding the parameters of the best validation epoch.
/// `extra` are trainable tensors outside the model (bound after it, full
/// learning rate).
pub(crate) fn fit(
    model: &mut GnnModel,
    extra: &mut [Tensor],
    mut lr_scales: Vec<f64>,
    cfg: &TrainConfig,
    run: &Run<'_>,
    objective: &Objective<'_>,
) -> Result<FitOutcome> {
    let shapes: Vec<Vec<usize>> = model
        .params()
        .iter()
        .chain(extra.iter().collect::<Vec<_>>().iter())
        .map(|t| t.shape().to_vec())
        .collect();
    let shape_refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
    lr_scales.resize(shapes.len(), 1.0);
    let mut opt = Optimizer::new(cfg, &shape_refs, lr_scales);

    let mut rows = Vec::new();
    let mut names: Vec<String> = Vec::new();
    let mut best: Option<(usize, f64, Vec<Tensor>)> = None;
    let mut since_best = 0;
    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let x = tape.constant(run.ds.features().clone());
        let p = tape.bind(&model.params());
        let e = tape.bind(&extra.iter().collect::<Vec<_>>());
        let out = model.apply(&mut tape, &p, &run.ctx, x)?;
        let (loss, parts) = objective(&mut tape, &out, &e)?;
        let loss_value = tape.value(loss).item();
        if !loss_value.is_finite() {
            return Err(Error::Numeric(format!(
                "training loss became {loss_value} at epoch {epoch}"
            )));
        }
        let val = metric(tape.value(out.logits), &run.targets, &run.val_mask)?;
        if names.is_empty() {
            names = parts.iter().map(|(n, _)| (*n).to_owned()).collect();
        }
        rows.push(EpochRow {
            epoch,
            train_loss: loss_value,
            val_metric: val,
            components: parts.iter().map(|&(_, v)| tape.value(v).item()).collect(),
        });
        if best.as_ref().is_none_or(|(_, b, _)| val > *b) {
            let snapshot = model.params().into_iter().cloned().collect();
            best = Some((epoch, val, snapshot));
            since_best = 0;
        } else {
            since_best += 1;
        }

        tape.backward(loss)?;
        let grads = tape.param_grads();
        let mut params = model.params_mut();
        params.extend(extra.iter_mut());
        opt.step(params, grads)?;
        log::trace!("epoch {epoch}: loss {loss_value:.6} val {val:.4}");
        if cfg.patience > 0 && since_best >= cfg.patience {
            log::debug!("early stop at epoch {epoch}");
            break;
        }
    }
    let best = best.map(|(epoch, val, snapshot)| {
        for (dst, src) in model.params_mut().into_iter().zip(snapshot) {
            *dst = src;
        }
        (epoch, val)
    });
    Ok(FitOutcome {
        rows,
        component_names: names,
        best,
    })
}

pub(crate) fn finish_report(
    model: &GnnModel,
    ds: &NodeDataset,
    outcome: FitOutcome,
    method: &str,
    seed: u64,
    config: serde_json::Value,
    started: Instant,
) -> Result<TrainReport> {
    Ok(TrainReport {
        model: model.describe(),
        dataset: String::new(),
        method: method.to_owned(),
        alpha: None,
        seed,
        param_count: model.param_count(),
        component_names: outcome.component_names,
        rows: outcome.rows,
        best_epoch: outcome.best.map(|b| b.0),
        best_val_metric: outcome.best.map(|b| b.1),
        test_metric: evaluate(model, ds, Split::Test)?,
        baseline_metric: None,
        config,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

fn task_objective<'a>(run: &'a Run<'a>) -> impl Fn(&mut Tape, &ModelOutput, &[Var]) -> Result<(Var, Vec<(&'static str, Var)>)> + 'a {
    move |tape, out, _| {
        let l = run.task_loss(tape, out.logits)?;
        Ok((l, vec![("L_CE", l)]))
    }
}

/// Stage one: trains a plain convolutional model on the task loss.
pub fn pretrain_gcn(ds: &NodeDataset, arch: &ArchSpec, cfg: &TrainConfig) -> Result<(GnnModel, TrainReport)> {
    cfg.validate()?;
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = GnnModel::plain(arch, ds.feature_dim(), ds.output_width(), &mut rng)?;
    let run = Run::new(ds);
    let scales = vec![1.0; model.params().len()];
    let outcome = fit(&mut model, &mut [], scales, cfg, &run, &task_objective(&run))?;
    let config = json!({ "arch": arch.to_string(), "train": cfg });
    let report = finish_report(&model, ds, outcome, "pretrain", cfg.seed, config, started)?;
    Ok((model, report))
}

/// Stage two: drops the last convolution of `pretrained`, attaches the
/// positional encoding, an attention layer over the remaining backbone's
/// output width and a classifier head, then fine-tunes everything with the
/// backbone at `learning_rate · backbone_lr_scale`.
pub fn enhance_with_gkedm(
    pretrained: &GnnModel,
    ds: &NodeDataset,
    m: usize,
    n_heads: usize,
    cfg: &TrainConfig,
) -> Result<(GnnModel, TrainReport)> {
    cfg.validate()?;
    if pretrained.enhancement.is_some() {
        return Err(Error::Contract("model is already enhanced".into()));
    }
    if pretrained.convs.len() < 2 {
        return Err(Error::Contract(
            "enhancement replaces the last convolution, so the backbone needs at least two".into(),
        ));
    }
    let started = Instant::now();
    let baseline = evaluate(pretrained, ds, Split::Test)?;

    let convs = pretrained.convs[..pretrained.convs.len() - 1].to_vec();
    let d = convs.last().expect("non-empty").d_out();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let layer = GkedmAttentionLayer::new(d, n_heads, m, &mut rng)?;
    let pe = laplacian_pe(ds.graph(), m, SignRule::LargestPositive)?;
    let head = if cfg.transplant_head {
        if pretrained.head.d_in() != d {
            return Err(Error::Config(format!(
                "cannot transplant a head of width {} onto width {d}",
                pretrained.head.d_in()
            )));
        }
        pretrained.head.clone()
    } else {
        ClassifierHead::new(d, d, ds.output_width(), &mut rng)
    };
    let mut model = GnnModel {
        convs,
        enhancement: Some(Enhancement { pe, layer }),
        head,
    };

    let run = Run::new(ds);
    let n_backbone = model.backbone_tensor_count();
    let scales = (0..model.params().len())
        .map(|k| if k < n_backbone { cfg.backbone_lr_scale } else { 1.0 })
        .collect();
    let outcome = fit(&mut model, &mut [], scales, cfg, &run, &task_objective(&run))?;
    let config = json!({ "m": m, "n_heads": n_heads, "train": cfg });
    let mut report = finish_report(&model, ds, outcome, "gkedm", cfg.seed, config, started)?;
    report.baseline_metric = Some(baseline);
    Ok((model, report))
}
