//! Task losses and the logit / feature / local-structure baselines.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::CsrGraph;
use crate::tensor::{Tape, Tensor, Var, PROB_FLOOR};

fn masked_indices(mask: &[bool], n: usize, op: &str) -> Result<Arc<[usize]>> {
    if mask.len() != n {
        return Err(Error::Contract(format!(
            "{op}: mask has {} entries for {n} rows",
            mask.len()
        )));
    }
    let idx: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
    if idx.is_empty() {
        return Err(Error::Contract(format!("{op}: mask selects no nodes")));
    }
    Ok(idx.into())
}

/// Mean over masked nodes of `−log softmax(logits)[label]`.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize], mask: &[bool]) -> Result<Var> {
    let (n, c) = (tape.value(logits).rows(), tape.value(logits).cols());
    if labels.len() != n {
        return Err(Error::dim("cross_entropy", tape.shape(logits), &[labels.len()]));
    }
    let idx = masked_indices(mask, n, "cross_entropy")?;
    let mut pick = Tensor::zeros(&[n, c]);
    let w = -1.0 / idx.len() as f64;
    for &i in idx.iter() {
        if labels[i] >= c {
            return Err(Error::Contract(format!("label {} out of range for {c} classes", labels[i])));
        }
        pick.set(i, labels[i], w);
    }
    let logp = tape.log_softmax_rows(logits);
    let pick = tape.constant(pick);
    let terms = tape.mul(logp, pick)?;
    Ok(tape.sum(terms))
}

/// Mean over masked nodes and labels of binary cross-entropy on
/// `sigmoid(logits)`, computed as `softplus(z) − y·z`.
pub fn bce_multilabel(tape: &mut Tape, logits: Var, labels: &Tensor, mask: &[bool]) -> Result<Var> {
    if !labels.same_shape(tape.value(logits)) {
        return Err(Error::dim("bce_multilabel", tape.shape(logits), labels.shape()));
    }
    let idx = masked_indices(mask, labels.rows(), "bce_multilabel")?;
    let count = (idx.len() * labels.cols()) as f64;
    let y = tape.constant(labels.select_rows(&idx));
    let z = tape.gather_rows(logits, idx)?;
    let sp = tape.softplus(z);
    let yz = tape.mul(y, z)?;
    let terms = tape.sub(sp, yz)?;
    let total = tape.sum(terms);
    Ok(tape.scale(total, 1.0 / count))
}

/// Rowwise softmax of a constant tensor.
pub(crate) fn softmax_rows(t: &Tensor) -> Tensor {
    let c = t.cols();
    let mut out = vec![0.0; t.numel()];
    for r in 0..t.rows() {
        crate::tensor::softmax_into(t.row(r), &mut out[r * c..(r + 1) * c]);
    }
    Tensor::new(t.shape().to_vec(), out).expect("shape preserved")
}

/// `Σ p ln p` with the probability floor, for a constant distribution.
pub(crate) fn neg_entropy(p: &Tensor) -> f64 {
    p.data()
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.max(PROB_FLOOR).ln())
        .sum()
}

/// `KL(softmax(z_T/T) ‖ softmax(z_S/T)) · T²`, averaged over nodes. The
/// teacher logits enter as a constant.
pub fn kd_soft_loss(tape: &mut Tape, z_t: &Tensor, z_s: Var, temperature: f64) -> Result<Var> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature must be > 0, got {temperature}")));
    }
    if !z_t.same_shape(tape.value(z_s)) {
        return Err(Error::dim("kd_soft_loss", z_t.shape(), tape.shape(z_s)));
    }
    let n = z_t.rows() as f64;
    let p_t = softmax_rows(&z_t.map(|x| x / temperature));
    let scaled = tape.scale(z_s, 1.0 / temperature);
    let log_q = tape.log_softmax_rows(scaled);
    let neg_p = tape.constant(p_t.map(|x| -x));
    let cross = tape.mul(log_q, neg_p)?;
    let cross = tape.sum(cross);
    let konst = tape.constant(Tensor::scalar(neg_entropy(&p_t)));
    let kl = tape.add(cross, konst)?;
    // Rounding can leave a tiny negative residue when the two match.
    let kl = tape.relu(kl);
    Ok(tape.scale(kl, temperature * temperature / n))
}

/// Mean squared error between `H_S · adapter` and `H_T` over masked nodes.
pub fn fitnet_loss(
    tape: &mut Tape,
    h_s: Var,
    h_t: &Tensor,
    adapter: Var,
    mask: &[bool],
) -> Result<Var> {
    let (hs, ad) = (tape.value(h_s), tape.value(adapter));
    if hs.rows() != h_t.rows() || hs.cols() != ad.rows() || ad.cols() != h_t.cols() {
        return Err(Error::dim("fitnet_loss", hs.shape(), h_t.shape()));
    }
    let idx = masked_indices(mask, h_t.rows(), "fitnet_loss")?;
    let count = (idx.len() * h_t.cols()) as f64;
    let target = tape.constant(h_t.select_rows(&idx));
    let rows = tape.gather_rows(h_s, idx)?;
    let mapped = tape.matmul(rows, adapter)?;
    let diff = tape.sub(mapped, target)?;
    let sq = tape.mul(diff, diff)?;
    let total = tape.sum(sq);
    Ok(tape.scale(total, 1.0 / count))
}

/// Similarity kernel for local structure preserving distillation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LspKernel {
    Rbf { sigma: f64 },
    Poly { degree: u32 },
    Linear,
}

impl LspKernel {
    fn validate(self) -> Result<()> {
        match self {
            LspKernel::Rbf { sigma } if !(sigma > 0.0) => Err(Error::Contract(format!(
                "rbf kernel needs sigma > 0, got {sigma}"
            ))),
            LspKernel::Poly { degree: 0 } => {
                Err(Error::Contract("poly kernel needs degree ≥ 1".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Kernel similarity of two feature vectors.
pub fn lsp_kernel(a: &[f64], b: &[f64], kernel: LspKernel) -> Result<f64> {
    kernel.validate()?;
    if a.len() != b.len() {
        return Err(Error::dim("lsp_kernel", &[a.len()], &[b.len()]));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(match kernel {
        LspKernel::Linear => dot,
        LspKernel::Poly { degree } => dot.powi(degree as i32),
        LspKernel::Rbf { sigma } => {
            let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            (-d2 / (2.0 * sigma * sigma)).exp()
        }
    })
}

/// Neighbor structure used by the local-structure loss: edges without
/// self-loops, grouped into one segment per node that has neighbors.
struct LspEdges {
    src: Arc<[usize]>,
    dst: Arc<[usize]>,
    segments: Arc<[usize]>,
    skipped: usize,
}

fn lsp_edges(g: &CsrGraph) -> LspEdges {
    let g = g.remove_self_loops();
    let (mut src, mut dst) = (Vec::new(), Vec::new());
    let mut segments = vec![0];
    let mut skipped = 0;
    for i in 0..g.n_nodes() {
        let nb = g.neighbors(i);
        if nb.is_empty() {
            skipped += 1;
            continue;
        }
        for &j in nb {
            src.push(i);
            dst.push(j);
        }
        segments.push(src.len());
    }
    LspEdges {
        src: src.into(),
        dst: dst.into(),
        segments: segments.into(),
        skipped,
    }
}

fn kernel_on_edges(tape: &mut Tape, h: Var, e: &LspEdges, kernel: LspKernel) -> Result<Var> {
    let hi = tape.gather_rows(h, e.src.clone())?;
    let hj = tape.gather_rows(h, e.dst.clone())?;
    Ok(match kernel {
        LspKernel::Linear => {
            let p = tape.mul(hi, hj)?;
            tape.row_sum(p)
        }
        LspKernel::Poly { degree } => {
            let p = tape.mul(hi, hj)?;
            let dot = tape.row_sum(p);
            let mut acc = dot;
            for _ in 1..degree {
                acc = tape.mul(acc, dot)?;
            }
            acc
        }
        LspKernel::Rbf { sigma } => {
            let diff = tape.sub(hi, hj)?;
            let sq = tape.mul(diff, diff)?;
            let d2 = tape.row_sum(sq);
            let z = tape.scale(d2, -1.0 / (2.0 * sigma * sigma));
            tape.exp(z)
        }
    })
}

/// `Σ_i KL(p_i^S ‖ p_i^T) / n`, where `p_i` is the softmax over the
/// non-self neighbors of `i` of kernel similarities. Nodes without neighbors
/// contribute zero. Gradients flow to the student only.
pub fn lsp_loss(
    tape: &mut Tape,
    h_s: Var,
    h_t: &Tensor,
    g: &CsrGraph,
    kernel: LspKernel,
) -> Result<Var> {
    kernel.validate()?;
    let n = g.n_nodes();
    if tape.value(h_s).rows() != n || h_t.rows() != n {
        return Err(Error::dim("lsp_loss", tape.shape(h_s), h_t.shape()));
    }
    let edges = lsp_edges(g);
    if edges.skipped > 0 {
        log::debug!("lsp_loss: {} nodes without neighbors skipped", edges.skipped);
    }
    if edges.src.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }

    let mut teacher = Tape::new();
    let ht = teacher.constant(h_t.clone());
    let kt = kernel_on_edges(&mut teacher, ht, &edges, kernel)?;
    let pt = teacher.segment_softmax(kt, edges.segments.clone())?;
    let log_pt = teacher.log(pt);
    let log_pt = tape.constant(teacher.value(log_pt).clone());

    let ks = kernel_on_edges(tape, h_s, &edges, kernel)?;
    let ps = tape.segment_softmax(ks, edges.segments.clone())?;
    let log_ps = tape.log(ps);
    let diff = tape.sub(log_ps, log_pt)?;
    let terms = tape.mul(ps, diff)?;
    let total = tape.sum(terms);
    let total = tape.relu(total);
    Ok(tape.scale(total, 1.0 / n as f64))
}
