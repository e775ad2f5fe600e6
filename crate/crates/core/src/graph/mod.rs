//! Graphs, Laplacian positional encodings and node-classification datasets.

mod csr;
mod dataset;
mod sbm;
mod spectral;

pub use csr::{CsrGraph, EdgeIndex};
pub use dataset::{
    dataset_from_jsonl, dataset_to_jsonl, load_dataset, permute_nodes, save_dataset, Labels,
    NodeDataset, Split, TaskKind,
};
pub use sbm::{
    multilabel_sbm_generate, random_label_probs, sbm_generate, MultiLabelSbmConfig, SbmConfig,
};
pub use spectral::{
    laplacian_pe, normalized_laplacian, symmetric_eigen, PeMatrix, SignRule, SymmetricEigen,
    DISTINCT_EIGENVALUE_GAP,
};
