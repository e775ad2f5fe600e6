//! Multi-head self-attention restricted to 1-hop neighborhoods.
//!
//! Logits exist only on graph edges, so the cost is `O(|E| · d)` rather than
//! `O(n² · d)`. Heads split the model width evenly; their outputs are
//! concatenated and added back onto the (position-encoded) input.

use rand::Rng;

use super::{glorot, GraphContext, Module};
use crate::error::{Error, Result};
use crate::graph::{EdgeIndex, PeMatrix};
use crate::tensor::{Tape, Tensor, Var};

/// `H + PE · f`.
pub fn pe_inject(tape: &mut Tape, h: Var, pe: &PeMatrix, pe_map: Var) -> Result<Var> {
    let (hs, fs) = (tape.shape(h).to_vec(), tape.shape(pe_map).to_vec());
    if fs.len() != 2 || fs[0] != pe.dim() || hs.len() != 2 || fs[1] != hs[1] || hs[0] != pe.n_nodes() {
        return Err(Error::dim("pe_inject", &hs, &fs));
    }
    let pe = tape.constant(pe.values.clone());
    let shift = tape.matmul(pe, pe_map)?;
    tape.add(h, shift)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GkedmAttentionLayer {
    n_heads: usize,
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    /// Linear map from the `m` positional-encoding columns to the model width.
    pub pe_map: Tensor,
    pub capture: bool,
}

impl GkedmAttentionLayer {
    pub fn new(d_model: usize, n_heads: usize, pe_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        if n_heads == 0 || !d_model.is_multiple_of(n_heads) {
            return Err(Error::Config(format!(
                "n_heads {n_heads} does not divide d_model {d_model}"
            )));
        }
        Ok(Self {
            n_heads,
            wq: glorot(d_model, d_model, rng),
            bq: Tensor::zeros(&[d_model]),
            wk: glorot(d_model, d_model, rng),
            bk: Tensor::zeros(&[d_model]),
            wv: glorot(d_model, d_model, rng),
            bv: Tensor::zeros(&[d_model]),
            pe_map: glorot(pe_dim, d_model, rng),
            capture: true,
        })
    }

    pub fn from_parts(n_heads: usize, params: [Tensor; 7]) -> Result<Self> {
        let [pe_map, wq, bq, wk, bk, wv, bv] = params;
        let d = wq.cols();
        if n_heads == 0 || d % n_heads != 0 {
            return Err(Error::Config(format!(
                "n_heads {n_heads} does not divide d_model {d}"
            )));
        }
        for w in [&wq, &wk, &wv] {
            if w.shape() != [d, d] {
                return Err(Error::dim("GkedmAttentionLayer", w.shape(), &[d, d]));
            }
        }
        for b in [&bq, &bk, &bv] {
            if b.numel() != d {
                return Err(Error::dim("GkedmAttentionLayer", b.shape(), &[d]));
            }
        }
        if !pe_map.is_matrix() || pe_map.cols() != d {
            return Err(Error::dim("GkedmAttentionLayer", pe_map.shape(), &[d]));
        }
        Ok(Self {
            n_heads,
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            pe_map,
            capture: true,
        })
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    pub fn d_model(&self) -> usize {
        self.wq.rows()
    }

    pub fn d_head(&self) -> usize {
        self.d_model() / self.n_heads
    }

    pub fn pe_dim(&self) -> usize {
        self.pe_map.rows()
    }

    /// Positional encoding injection followed by attention; binds its own
    /// parameters.
    pub fn forward(
        &self,
        tape: &mut Tape,
        ctx: &GraphContext,
        pe: &PeMatrix,
        h: Var,
    ) -> Result<(Var, Option<AttentionVars>)> {
        let p = tape.bind(&self.params());
        self.apply(tape, &p, ctx, pe, h)
    }

    /// As [`forward`](Self::forward) with parameters on the tape in
    /// [`Module::params`] order.
    pub fn apply(
        &self,
        tape: &mut Tape,
        p: &[Var],
        ctx: &GraphContext,
        pe: &PeMatrix,
        h: Var,
    ) -> Result<(Var, Option<AttentionVars>)> {
        let h_hat = pe_inject(tape, h, pe, p[0])?;
        self.attend(tape, &p[1..], ctx, h_hat)
    }

    /// Attention on an already position-encoded input. `p` holds
    /// `[wq, bq, wk, bk, wv, bv]`.
    pub fn attend(
        &self,
        tape: &mut Tape,
        p: &[Var],
        ctx: &GraphContext,
        h_hat: Var,
    ) -> Result<(Var, Option<AttentionVars>)> {
        let d = self.d_model();
        let shape = tape.shape(h_hat);
        if shape.len() != 2 || shape[1] != d || shape[0] != ctx.n_nodes() {
            return Err(Error::dim("gkedm_forward", shape, &[ctx.n_nodes(), d]));
        }
        let edges = ctx.edges();
        let project = |tape: &mut Tape, w: Var, b: Var| -> Result<Var> {
            let x = tape.matmul(h_hat, w)?;
            tape.add(x, b)
        };
        let q = project(tape, p[0], p[1])?;
        let k = project(tape, p[2], p[3])?;
        let v = project(tape, p[4], p[5])?;

        let dh = self.d_head();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outputs = Vec::with_capacity(self.n_heads);
        let mut heads = Vec::with_capacity(self.n_heads);
        for head in 0..self.n_heads {
            let (lo, hi) = (head * dh, (head + 1) * dh);
            let qh = tape.slice_cols(q, lo, hi)?;
            let kh = tape.slice_cols(k, lo, hi)?;
            let vh = tape.slice_cols(v, lo, hi)?;
            let logits = tape.edge_dot(qh, kh, edges)?;
            let logits = tape.scale(logits, scale);
            let attn = tape.segment_softmax(logits, edges.row_ptr().clone())?;
            outputs.push(tape.edge_aggregate(attn, vh, edges)?);
            heads.push(HeadVars {
                attn,
                q: qh,
                k: kh,
                v: vh,
            });
        }
        let merged = if outputs.len() == 1 {
            outputs[0]
        } else {
            tape.concat_cols(&outputs)?
        };
        let out = tape.add(merged, h_hat)?;
        let record = self.capture.then(|| AttentionVars {
            edges: edges.clone(),
            heads,
        });
        Ok((out, record))
    }
}

impl Module for GkedmAttentionLayer {
    fn params(&self) -> Vec<&Tensor> {
        vec![
            &self.pe_map,
            &self.wq,
            &self.bq,
            &self.wk,
            &self.bk,
            &self.wv,
            &self.bv,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.pe_map,
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
        ]
    }
}

/// Tape handles for one head: edge-packed attention weights and the head's
/// slices of the Q/K/V projections.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub attn: Var,
    pub q: Var,
    pub k: Var,
    pub v: Var,
}

/// Attention captured during a forward pass, still attached to the tape so
/// distillation losses can differentiate through it.
#[derive(Clone, Debug)]
pub struct AttentionVars {
    pub edges: EdgeIndex,
    pub heads: Vec<HeadVars>,
}

impl AttentionVars {
    /// Snapshot of the current values, detached from the tape.
    pub fn to_record(&self, tape: &Tape) -> AttentionRecord {
        AttentionRecord {
            edges: self.edges.clone(),
            heads: self
                .heads
                .iter()
                .map(|h| HeadRecord {
                    attn: tape.value(h.attn).clone(),
                    q: tape.value(h.q).clone(),
                    k: tape.value(h.k).clone(),
                    v: tape.value(h.v).clone(),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadRecord {
    /// Weights aligned with the edge order of `edges`.
    pub attn: Tensor,
    pub q: Tensor,
    pub k: Tensor,
    pub v: Tensor,
}

/// Plain-value attention maps and projections of a GKEDM layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRecord {
    pub edges: EdgeIndex,
    pub heads: Vec<HeadRecord>,
}

impl AttentionRecord {
    pub fn n_heads(&self) -> usize {
        self.heads.len()
    }

    /// Largest deviation of a per-node attention sum from 1, and the most
    /// negative weight seen.
    pub fn normalization_error(&self) -> (f64, f64) {
        let mut worst = 0.0_f64;
        let mut min_w = f64::INFINITY;
        for h in &self.heads {
            for w in self.edges.row_ptr().windows(2) {
                let s: f64 = h.attn.data()[w[0]..w[1]].iter().sum();
                worst = worst.max((s - 1.0).abs());
            }
            min_w = h.attn.data().iter().fold(min_w, |m, &x| m.min(x));
        }
        (worst, min_w)
    }
}
