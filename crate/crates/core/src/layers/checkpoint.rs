//! Checkpoint directory: `manifest.json` plus `params.bin`, a flat
//! little-endian f64 blob addressed by the manifest's tensor table.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    ArchSpec, ClassifierHead, ConvKind, ConvLayer, Enhancement, GcnConv, GkedmAttentionLayer,
    GnnModel, Module, SageConv, Activation,
};
use crate::error::{Error, Result};
use crate::graph::PeMatrix;
use crate::io::write_atomic;
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "gkedm-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const BLOB: &str = "params.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob in bytes.
    pub offset: usize,
    pub len: usize,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub architecture: String,
    pub conv_kind: ConvKind,
    /// Input width followed by every convolution's output width.
    pub layer_dims: Vec<usize>,
    pub n_outputs: usize,
    pub n_heads: Option<usize>,
    pub m: Option<usize>,
    pub param_count: usize,
    /// Dataset the model was trained on, if known.
    pub dataset: Option<String>,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(model: &GnnModel, dir: impl AsRef<Path>, dataset: Option<&str>) -> Result<()> {
    let dir = dir.as_ref();
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    let mut push = |name: String, t: &Tensor, trainable: bool| {
        tensors.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            offset: blob.len(),
            len: t.numel(),
            trainable,
        });
        for x in t.data() {
            blob.extend_from_slice(&x.to_le_bytes());
        }
    };
    for (name, t) in model.named_params() {
        push(name, t, true);
    }
    if let Some(e) = &model.enhancement {
        push("pe.values".into(), &e.pe.values, false);
        push(
            "pe.eigenvalues".into(),
            &Tensor::vector(e.pe.eigenvalues.clone()),
            false,
        );
    }
    let arch = model.arch();
    let mut layer_dims = vec![model.d_in()];
    layer_dims.extend(&arch.widths);
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        architecture: model.describe(),
        conv_kind: arch.kind,
        layer_dims,
        n_outputs: model.n_out(),
        n_heads: model.attention_layer().map(GkedmAttentionLayer::n_heads),
        m: model.attention_layer().map(GkedmAttentionLayer::pe_dim),
        param_count: model.param_count(),
        dataset: dataset.map(str::to_owned),
        tensors,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    write_atomic(dir.join(BLOB), &blob)?;
    write_atomic(dir.join(MANIFEST), json.as_bytes())
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<CheckpointManifest> {
    let path = dir.as_ref().join(MANIFEST);
    let text = crate::io::read_to_string(&path)?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    if manifest.format != CHECKPOINT_FORMAT || manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Validation(format!(
            "{}: not a {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION} manifest",
            path.display()
        )));
    }
    Ok(manifest)
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<(GnnModel, CheckpointManifest)> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let blob_path = dir.join(BLOB);
    let blob = std::fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;

    let mut table: HashMap<&str, Tensor> = HashMap::new();
    for entry in &manifest.tensors {
        let end = entry.offset + entry.len * 8;
        if end > blob.len() || entry.shape.iter().product::<usize>() != entry.len {
            return Err(Error::Validation(format!("tensor {} out of range", entry.name)));
        }
        let data = blob[entry.offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        table.insert(&entry.name, Tensor::new(entry.shape.clone(), data)?);
    }
    let mut take = |name: &str| {
        table
            .remove(name)
            .ok_or_else(|| Error::Validation(format!("checkpoint is missing tensor {name}")))
    };

    let n_convs = manifest.layer_dims.len().saturating_sub(1);
    if n_convs == 0 {
        return Err(Error::Validation("checkpoint has no convolution layers".into()));
    }
    let mut convs = Vec::with_capacity(n_convs);
    for i in 0..n_convs {
        let conv = match manifest.conv_kind {
            ConvKind::Gcn => ConvLayer::Gcn(GcnConv {
                weight: take(&format!("conv{i}.weight"))?,
                bias: take(&format!("conv{i}.bias"))?,
                activation: Activation::Relu,
            }),
            ConvKind::Sage => ConvLayer::Sage(SageConv {
                weight_self: take(&format!("conv{i}.weight_self"))?,
                weight_neigh: take(&format!("conv{i}.weight_neigh"))?,
                bias: take(&format!("conv{i}.bias"))?,
                activation: Activation::Relu,
            }),
        };
        convs.push(conv);
    }
    let enhancement = match manifest.n_heads {
        Some(n_heads) => {
            let names = ["pe_map", "wq", "bq", "wk", "bk", "wv", "bv"];
            let mut parts = Vec::with_capacity(7);
            for name in names {
                parts.push(take(&format!("gkedm.{name}"))?);
            }
            let parts: [Tensor; 7] = parts.try_into().expect("seven tensors");
            let layer = GkedmAttentionLayer::from_parts(n_heads, parts)?;
            let pe = PeMatrix {
                values: take("pe.values")?,
                eigenvalues: take("pe.eigenvalues")?.into_data(),
            };
            Some(Enhancement { pe, layer })
        }
        None => None,
    };
    let head = ClassifierHead {
        w1: take("head.w1")?,
        b1: take("head.b1")?,
        w2: take("head.w2")?,
        b2: take("head.b2")?,
    };
    let model = GnnModel {
        convs,
        enhancement,
        head,
    };
    let expected = ArchSpec {
        kind: manifest.conv_kind,
        widths: manifest.layer_dims[1..].to_vec(),
    };
    if model.arch() != expected
        || model.d_in() != manifest.layer_dims[0]
        || model.n_out() != manifest.n_outputs
        || model.param_count() != manifest.param_count
    {
        return Err(Error::Validation(
            "checkpoint tensors disagree with the manifest dimensions".into(),
        ));
    }
    Ok((model, manifest))
}
