use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::csr::{check_permutation, CsrGraph};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "multi-class")]
    MultiClass,
    #[serde(rename = "multi-label")]
    MultiLabel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    None,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "none" => Ok(Split::None),
            other => Err(Error::Config(format!(
                "unknown split {other:?} (expected train|val|test)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Labels {
    MultiClass { n_classes: usize, classes: Vec<usize> },
    /// Row-major `n × n_labels` matrix of 0/1 entries.
    MultiLabel { n_labels: usize, matrix: Vec<u8> },
}

impl Labels {
    pub fn task_kind(&self) -> TaskKind {
        match self {
            Labels::MultiClass { .. } => TaskKind::MultiClass,
            Labels::MultiLabel { .. } => TaskKind::MultiLabel,
        }
    }

    /// Width of the classifier output.
    pub fn width(&self) -> usize {
        match self {
            Labels::MultiClass { n_classes, .. } => *n_classes,
            Labels::MultiLabel { n_labels, .. } => *n_labels,
        }
    }

    fn n_nodes(&self) -> usize {
        match self {
            Labels::MultiClass { classes, .. } => classes.len(),
            Labels::MultiLabel { n_labels, matrix } => matrix.len() / (*n_labels).max(1),
        }
    }
}

/// Graph, node features, labels and a train/val/test assignment per node.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeDataset {
    graph: CsrGraph,
    features: Tensor,
    labels: Labels,
    splits: Vec<Split>,
}

impl NodeDataset {
    pub fn new(graph: CsrGraph, features: Tensor, labels: Labels, splits: Vec<Split>) -> Result<Self> {
        let n = graph.n_nodes();
        if !features.is_matrix() || features.rows() != n {
            return Err(Error::dim("NodeDataset features", features.shape(), &[n]));
        }
        if labels.n_nodes() != n || splits.len() != n {
            return Err(Error::Validation(format!(
                "labels cover {} nodes and splits {} nodes, graph has {n}",
                labels.n_nodes(),
                splits.len()
            )));
        }
        match &labels {
            Labels::MultiClass { n_classes, classes } => {
                if let Some((i, c)) = classes.iter().enumerate().find(|(_, &c)| c >= *n_classes) {
                    return Err(Error::Validation(format!(
                        "node {i} has class {c} outside [0, {n_classes})"
                    )));
                }
            }
            Labels::MultiLabel { n_labels, matrix } => {
                if *n_labels == 0 || matrix.len() != n * n_labels {
                    return Err(Error::Validation("multi-label matrix has wrong size".into()));
                }
                if matrix.iter().any(|&v| v > 1) {
                    return Err(Error::Validation("multi-label entries must be 0 or 1".into()));
                }
            }
        }
        Ok(Self {
            graph,
            features,
            labels,
            splits,
        })
    }

    pub fn graph(&self) -> &CsrGraph {
        &self.graph
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn n_nodes(&self) -> usize {
        self.graph.n_nodes()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn task_kind(&self) -> TaskKind {
        self.labels.task_kind()
    }

    pub fn output_width(&self) -> usize {
        self.labels.width()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn mask(&self, split: Split) -> Vec<bool> {
        self.splits.iter().map(|&s| s == split).collect()
    }

    /// Relabels node `i` as `perm[i]` consistently across graph, features,
    /// labels and splits.
    pub fn permute(&self, perm: &[usize]) -> Result<NodeDataset> {
        check_permutation(perm, self.n_nodes())?;
        let graph = self.graph.permute(perm)?;
        let mut inv = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let features = self.features.select_rows(&inv);
        let labels = match &self.labels {
            Labels::MultiClass { n_classes, classes } => Labels::MultiClass {
                n_classes: *n_classes,
                classes: inv.iter().map(|&i| classes[i]).collect(),
            },
            Labels::MultiLabel { n_labels, matrix } => Labels::MultiLabel {
                n_labels: *n_labels,
                matrix: inv
                    .iter()
                    .flat_map(|&i| matrix[i * n_labels..(i + 1) * n_labels].iter().copied())
                    .collect(),
            },
        };
        let splits = inv.iter().map(|&i| self.splits[i]).collect();
        NodeDataset::new(graph, features, labels, splits)
    }
}

pub fn permute_nodes(ds: &NodeDataset, perm: &[usize]) -> Result<NodeDataset> {
    ds.permute(perm)
}

// ---- JSON-lines format ------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    n_nodes: usize,
    feature_dim: usize,
    task_kind: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_labels: Option<usize>,
    symmetric: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LabelValue {
    Class(usize),
    Multi(Vec<u8>),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeLine {
    id: usize,
    features: Vec<f64>,
    label: LabelValue,
    split: Split,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeLine {
    src: usize,
    dst: usize,
}

/// Serializes a dataset as JSON lines: header, one line per node, then one
/// line per edge (each undirected edge once when the graph is symmetric).
pub fn dataset_to_jsonl(ds: &NodeDataset) -> Result<String> {
    let g = ds.graph();
    let header = HeaderLine {
        n_nodes: ds.n_nodes(),
        feature_dim: ds.feature_dim(),
        task_kind: ds.task_kind(),
        n_classes: match ds.labels() {
            Labels::MultiClass { n_classes, .. } => Some(*n_classes),
            _ => None,
        },
        n_labels: match ds.labels() {
            Labels::MultiLabel { n_labels, .. } => Some(*n_labels),
            _ => None,
        },
        symmetric: g.is_symmetric(),
    };
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    for i in 0..ds.n_nodes() {
        let label = match ds.labels() {
            Labels::MultiClass { classes, .. } => LabelValue::Class(classes[i]),
            Labels::MultiLabel { n_labels, matrix } => {
                LabelValue::Multi(matrix[i * n_labels..(i + 1) * n_labels].to_vec())
            }
        };
        let line = NodeLine {
            id: i,
            features: ds.features().row(i).to_vec(),
            label,
            split: ds.splits()[i],
        };
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    for (src, dst) in g.edges() {
        if g.is_symmetric() && src > dst {
            continue;
        }
        writeln!(out, "{}", serde_json::to_string(&EdgeLine { src, dst })?)
            .expect("writing to a String");
    }
    Ok(out)
}

fn parse_line<'a, T: Deserialize<'a>>(line: &'a str, lineno: usize) -> Result<T> {
    serde_json::from_str(line).map_err(|e| Error::Parse {
        line: lineno,
        msg: e.to_string(),
    })
}

pub fn dataset_from_jsonl(text: &str) -> Result<NodeDataset> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let (hline, htext) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "missing header line".into(),
    })?;
    let header: HeaderLine = parse_line(htext, hline)?;
    let n = header.n_nodes;
    let width = match (header.task_kind, header.n_classes, header.n_labels) {
        (TaskKind::MultiClass, Some(c), None) => c,
        (TaskKind::MultiLabel, None, Some(l)) => l,
        _ => {
            return Err(Error::Parse {
                line: hline,
                msg: "header needs n_classes for multi-class or n_labels for multi-label".into(),
            })
        }
    };

    let mut features = vec![0.0; n * header.feature_dim];
    let mut classes = vec![0usize; n];
    let mut multi = vec![0u8; n * width];
    let mut splits = vec![Split::None; n];
    let mut seen = vec![false; n];
    for _ in 0..n {
        let (lineno, l) = lines.next().ok_or(Error::Parse {
            line: hline,
            msg: format!("expected {n} node lines"),
        })?;
        let node: NodeLine = parse_line(l, lineno)?;
        let bad = |msg: String| Error::Parse { line: lineno, msg };
        if node.id >= n {
            return Err(Error::Validation(format!(
                "line {lineno}: node id {} outside [0, {n})",
                node.id
            )));
        }
        if std::mem::replace(&mut seen[node.id], true) {
            return Err(bad(format!("duplicate node id {}", node.id)));
        }
        if node.features.len() != header.feature_dim {
            return Err(bad(format!(
                "node {} has {} features, header says {}",
                node.id,
                node.features.len(),
                header.feature_dim
            )));
        }
        features[node.id * header.feature_dim..(node.id + 1) * header.feature_dim]
            .copy_from_slice(&node.features);
        match (header.task_kind, node.label) {
            (TaskKind::MultiClass, LabelValue::Class(c)) => classes[node.id] = c,
            (TaskKind::MultiLabel, LabelValue::Multi(v)) if v.len() == width => {
                multi[node.id * width..(node.id + 1) * width].copy_from_slice(&v)
            }
            _ => return Err(bad(format!("label of node {} does not match task kind", node.id))),
        }
        splits[node.id] = node.split;
    }

    let mut edges = Vec::new();
    for (lineno, l) in lines {
        let e: EdgeLine = parse_line(l, lineno)?;
        if e.src >= n || e.dst >= n {
            return Err(Error::Validation(format!(
                "line {lineno}: edge ({}, {}) references a node outside [0, {n})",
                e.src, e.dst
            )));
        }
        edges.push((e.src, e.dst));
    }
    let graph = CsrGraph::from_edges(n, &edges, header.symmetric)?;
    let features = Tensor::matrix(n, header.feature_dim, features)?;
    let labels = match header.task_kind {
        TaskKind::MultiClass => Labels::MultiClass {
            n_classes: width,
            classes,
        },
        TaskKind::MultiLabel => Labels::MultiLabel {
            n_labels: width,
            matrix: multi,
        },
    };
    NodeDataset::new(graph, features, labels, splits)
}

pub fn save_dataset(ds: &NodeDataset, path: impl AsRef<Path>) -> Result<()> {
    crate::io::write_atomic(path, dataset_to_jsonl(ds)?.as_bytes())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<NodeDataset> {
    dataset_from_jsonl(&crate::io::read_to_string(path)?)
}
