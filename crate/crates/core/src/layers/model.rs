use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    Activation, AttentionRecord, AttentionVars, ClassifierHead, GcnConv, GkedmAttentionLayer,
    GraphContext, Module, SageConv,
};
use crate::error::{Error, Result};
use crate::graph::PeMatrix;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvKind {
    Gcn,
    Sage,
}

impl fmt::Display for ConvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConvKind::Gcn => "gcn",
            ConvKind::Sage => "sage",
        })
    }
}

/// Backbone description in the `kind:w1,w2,...` mini-language.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub kind: ConvKind,
    pub widths: Vec<usize>,
}

impl FromStr for ArchSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, widths) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("architecture {s:?} is not kind:w1,w2,...")))?;
        let kind = match kind.trim() {
            "gcn" => ConvKind::Gcn,
            "sage" => ConvKind::Sage,
            other => return Err(Error::Config(format!("unknown layer kind {other:?}"))),
        };
        let widths = widths
            .split(',')
            .map(|w| match w.trim().parse::<usize>() {
                Ok(v) if v > 0 => Ok(v),
                _ => Err(Error::Config(format!("bad layer width {w:?} in {s:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ArchSpec { kind, widths })
    }
}

impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w: Vec<String> = self.widths.iter().map(ToString::to_string).collect();
        write!(f, "{}:{}", self.kind, w.join(","))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ConvLayer {
    Gcn(GcnConv),
    Sage(SageConv),
}

impl ConvLayer {
    pub fn new(kind: ConvKind, d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        match kind {
            ConvKind::Gcn => ConvLayer::Gcn(GcnConv::new(d_in, d_out, Activation::Relu, rng)),
            ConvKind::Sage => ConvLayer::Sage(SageConv::new(d_in, d_out, Activation::Relu, rng)),
        }
    }

    pub fn kind(&self) -> ConvKind {
        match self {
            ConvLayer::Gcn(_) => ConvKind::Gcn,
            ConvLayer::Sage(_) => ConvKind::Sage,
        }
    }

    pub fn d_in(&self) -> usize {
        match self {
            ConvLayer::Gcn(l) => l.d_in(),
            ConvLayer::Sage(l) => l.d_in(),
        }
    }

    pub fn d_out(&self) -> usize {
        match self {
            ConvLayer::Gcn(l) => l.d_out(),
            ConvLayer::Sage(l) => l.d_out(),
        }
    }

    pub fn apply(&self, tape: &mut Tape, p: &[Var], ctx: &GraphContext, h: Var) -> Result<Var> {
        match self {
            ConvLayer::Gcn(l) => l.apply(tape, p, ctx, h),
            ConvLayer::Sage(l) => l.apply(tape, p, ctx, h),
        }
    }

    fn param_names(&self) -> &'static [&'static str] {
        match self {
            ConvLayer::Gcn(_) => &["weight", "bias"],
            ConvLayer::Sage(_) => &["weight_self", "weight_neigh", "bias"],
        }
    }
}

impl Module for ConvLayer {
    fn params(&self) -> Vec<&Tensor> {
        match self {
            ConvLayer::Gcn(l) => l.params(),
            ConvLayer::Sage(l) => l.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            ConvLayer::Gcn(l) => l.params_mut(),
            ConvLayer::Sage(l) => l.params_mut(),
        }
    }
}

/// Positional encoding of the training graph plus the attention layer that
/// consumes it.
#[derive(Clone, Debug, PartialEq)]
pub struct Enhancement {
    pub pe: PeMatrix,
    pub layer: GkedmAttentionLayer,
}

/// Stacked convolutions, an optional GKEDM attention layer, and a classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct GnnModel {
    pub convs: Vec<ConvLayer>,
    pub enhancement: Option<Enhancement>,
    pub head: ClassifierHead,
}

/// Handles produced by a model forward pass.
#[derive(Clone, Debug)]
pub struct ModelOutput {
    pub logits: Var,
    /// Representation fed to the classifier head.
    pub hidden: Var,
    pub attention: Option<AttentionVars>,
}

impl GnnModel {
    /// Convolutions followed directly by the classifier head.
    pub fn plain(arch: &ArchSpec, d_in: usize, n_out: usize, rng: &mut impl Rng) -> Result<Self> {
        if arch.widths.is_empty() {
            return Err(Error::Config("architecture needs at least one layer".into()));
        }
        let mut convs = Vec::with_capacity(arch.widths.len());
        let mut prev = d_in;
        for &w in &arch.widths {
            convs.push(ConvLayer::new(arch.kind, prev, w, rng));
            prev = w;
        }
        let head = ClassifierHead::new(prev, prev, n_out, rng);
        Ok(Self {
            convs,
            enhancement: None,
            head,
        })
    }

    /// Convolutions, then a GKEDM layer of width equal to the last
    /// convolution, then the head.
    pub fn with_attention(
        arch: &ArchSpec,
        d_in: usize,
        n_out: usize,
        pe: PeMatrix,
        n_heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut model = Self::plain(arch, d_in, n_out, rng)?;
        let d = model.hidden_width();
        let layer = GkedmAttentionLayer::new(d, n_heads, pe.dim(), rng)?;
        model.head = ClassifierHead::new(d, d, n_out, rng);
        model.enhancement = Some(Enhancement { pe, layer });
        Ok(model)
    }

    pub fn arch(&self) -> ArchSpec {
        ArchSpec {
            kind: self.convs[0].kind(),
            widths: self.convs.iter().map(ConvLayer::d_out).collect(),
        }
    }

    pub fn d_in(&self) -> usize {
        self.convs[0].d_in()
    }

    pub fn n_out(&self) -> usize {
        self.head.n_out()
    }

    /// Width of the representation entering the head.
    pub fn hidden_width(&self) -> usize {
        self.convs.last().map_or(0, ConvLayer::d_out)
    }

    pub fn attention_layer(&self) -> Option<&GkedmAttentionLayer> {
        self.enhancement.as_ref().map(|e| &e.layer)
    }

    pub fn describe(&self) -> String {
        match &self.enhancement {
            Some(e) => format!(
                "{}+gkedm(heads={},m={})",
                self.arch(),
                e.layer.n_heads(),
                e.layer.pe_dim()
            ),
            None => self.arch().to_string(),
        }
    }

    /// Number of leading tensors in [`Module::params`] that belong to the
    /// convolutional backbone.
    pub fn backbone_tensor_count(&self) -> usize {
        self.convs.iter().map(|c| c.params().len()).sum()
    }

    pub fn forward(&self, tape: &mut Tape, ctx: &GraphContext, x: Var) -> Result<ModelOutput> {
        let p = tape.bind(&self.params());
        self.apply(tape, &p, ctx, x)
    }

    pub fn apply(
        &self,
        tape: &mut Tape,
        p: &[Var],
        ctx: &GraphContext,
        x: Var,
    ) -> Result<ModelOutput> {
        let mut offset = 0;
        let mut h = x;
        for conv in &self.convs {
            let k = conv.params().len();
            h = conv.apply(tape, &p[offset..offset + k], ctx, h)?;
            offset += k;
        }
        let mut attention = None;
        if let Some(e) = &self.enhancement {
            let (out, rec) = e.layer.apply(tape, &p[offset..offset + 7], ctx, &e.pe, h)?;
            h = out;
            attention = rec;
            offset += 7;
        }
        let logits = self.head.apply(tape, &p[offset..offset + 4], h)?;
        Ok(ModelOutput {
            logits,
            hidden: h,
            attention,
        })
    }

    /// Inference-only forward pass returning logits, hidden representation
    /// and attention record as plain tensors.
    pub fn infer(
        &self,
        ctx: &GraphContext,
        features: &Tensor,
    ) -> Result<(Tensor, Tensor, Option<AttentionRecord>)> {
        let mut tape = Tape::new();
        let x = tape.constant(features.clone());
        let p: Vec<Var> = self
            .params()
            .into_iter()
            .map(|t| tape.constant(t.clone()))
            .collect();
        let out = self.apply(&mut tape, &p, ctx, x)?;
        let rec = out.attention.as_ref().map(|a| a.to_record(&tape));
        Ok((
            tape.value(out.logits).clone(),
            tape.value(out.hidden).clone(),
            rec,
        ))
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, conv) in self.convs.iter().enumerate() {
            for (name, t) in conv.param_names().iter().zip(conv.params()) {
                out.push((format!("conv{i}.{name}"), t));
            }
        }
        if let Some(e) = &self.enhancement {
            let names = ["pe_map", "wq", "bq", "wk", "bk", "wv", "bv"];
            for (name, t) in names.iter().zip(e.layer.params()) {
                out.push((format!("gkedm.{name}"), t));
            }
        }
        for (name, t) in ["w1", "b1", "w2", "b2"].iter().zip(self.head.params()) {
            out.push((format!("head.{name}"), t));
        }
        out
    }

    /// FNV-1a over the bit patterns of every parameter.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in self.params() {
            for x in t.data() {
                for b in x.to_bits().to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }
}

impl Module for GnnModel {
    fn params(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.convs.iter().flat_map(|c| c.params()).collect();
        if let Some(e) = &self.enhancement {
            out.extend(e.layer.params());
        }
        out.extend(self.head.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.convs.iter_mut().flat_map(|c| c.params_mut()).collect();
        if let Some(e) = &mut self.enhancement {
            out.extend(e.layer.params_mut());
        }
        out.extend(self.head.params_mut());
        out
    }
}
