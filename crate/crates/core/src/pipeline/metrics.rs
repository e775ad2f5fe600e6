use crate::error::{Error, Result};
use crate::graph::{Labels, NodeDataset, Split};
use crate::layers::{GnnModel, GraphContext};
use crate::tensor::Tensor;

/// Training targets in the form the losses want.
#[derive(Clone, Debug)]
pub enum Targets {
    Classes(Vec<usize>),
    Multi(Tensor),
}

impl Targets {
    pub fn from_labels(labels: &Labels) -> Self {
        match labels {
            Labels::MultiClass { classes, .. } => Targets::Classes(classes.clone()),
            Labels::MultiLabel { n_labels, matrix } => {
                let rows = matrix.len() / (*n_labels).max(1);
                let data = matrix.iter().map(|&b| f64::from(b)).collect();
                Targets::Multi(Tensor::matrix(rows, *n_labels, data).expect("label matrix shape"))
            }
        }
    }
}

/// Fraction of masked nodes whose arg-max logit is the label. Ties go to the
/// lowest class index.
pub fn accuracy(logits: &Tensor, classes: &[usize], mask: &[bool]) -> Result<f64> {
    let mut total = 0usize;
    let mut correct = 0usize;
    for i in (0..logits.rows()).filter(|&i| mask[i]) {
        let row = logits.row(i);
        let mut best = 0;
        for (c, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = c;
            }
        }
        total += 1;
        correct += usize::from(best == classes[i]);
    }
    if total == 0 {
        return Err(Error::Contract("metric over an empty split".into()));
    }
    Ok(correct as f64 / total as f64)
}

/// Micro-averaged F1 with prediction rule `sigmoid(z) > 0.5`, i.e. `z > 0`.
/// Pools TP/FP/FN over every masked node and label; 0 when nothing is
/// predicted or present.
pub fn micro_f1(logits: &Tensor, labels: &Tensor, mask: &[bool]) -> Result<f64> {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    let mut any = false;
    for i in (0..logits.rows()).filter(|&i| mask[i]) {
        any = true;
        for (&z, &y) in logits.row(i).iter().zip(labels.row(i)) {
            let pred = z > 0.0;
            let truth = y > 0.5;
            match (pred, truth) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    if !any {
        return Err(Error::Contract("metric over an empty split".into()));
    }
    let denom = 2 * tp + fp + fn_;
    Ok(if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 })
}

pub fn metric(logits: &Tensor, targets: &Targets, mask: &[bool]) -> Result<f64> {
    match targets {
        Targets::Classes(c) => accuracy(logits, c, mask),
        Targets::Multi(y) => micro_f1(logits, y, mask),
    }
}

/// Accuracy for multi-class datasets, micro-F1 for multi-label ones.
pub fn evaluate(model: &GnnModel, ds: &NodeDataset, split: Split) -> Result<f64> {
    if model.d_in() != ds.feature_dim() || model.n_out() != ds.output_width() {
        return Err(Error::dim(
            "evaluate",
            &[model.d_in(), model.n_out()],
            &[ds.feature_dim(), ds.output_width()],
        ));
    }
    let ctx = GraphContext::new(ds.graph());
    let (logits, _, _) = model.infer(&ctx, ds.features())?;
    metric(&logits, &Targets::from_labels(ds.labels()), &ds.mask(split))
}
