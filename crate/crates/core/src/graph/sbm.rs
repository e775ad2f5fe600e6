//! Stochastic-block-model datasets.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::csr::CsrGraph;
use super::dataset::{Labels, NodeDataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbmConfig {
    pub blocks: usize,
    pub nodes_per_block: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        Self {
            blocks: 4,
            nodes_per_block: 50,
            p_in: 0.15,
            p_out: 0.03,
            feature_dim: 8,
            noise_sigma: 1.0,
            seed: 0,
        }
    }
}

impl SbmConfig {
    fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.nodes_per_block == 0 {
            return Err(Error::Contract("SBM needs at least one block and one node".into()));
        }
        if !(0.0 <= self.p_out && self.p_out < self.p_in && self.p_in <= 1.0) {
            return Err(Error::Contract(format!(
                "SBM needs 0 ≤ p_out < p_in ≤ 1, got p_in={} p_out={}",
                self.p_in, self.p_out
            )));
        }
        if self.feature_dim < self.blocks {
            return Err(Error::Contract(format!(
                "feature_dim {} cannot hold one-hot centroids for {} blocks",
                self.feature_dim, self.blocks
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Contract("noise_sigma must be finite and ≥ 0".into()));
        }
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        self.blocks * self.nodes_per_block
    }

    pub fn block_of(&self, node: usize) -> usize {
        node / self.nodes_per_block
    }
}

struct Draw {
    graph: CsrGraph,
    features: Tensor,
    splits: Vec<Split>,
    rng: ChaCha8Rng,
}

fn draw_structure(cfg: &SbmConfig) -> Result<Draw> {
    cfg.validate()?;
    let n = cfg.n_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if cfg.block_of(i) == cfg.block_of(j) {
                cfg.p_in
            } else {
                cfg.p_out
            };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let graph = CsrGraph::from_edges(n, &edges, true)?;

    let noise = Normal::new(0.0, cfg.noise_sigma)
        .map_err(|e| Error::Contract(format!("invalid noise sigma: {e}")))?;
    let mut features = Tensor::zeros(&[n, cfg.feature_dim]);
    for i in 0..n {
        let b = cfg.block_of(i);
        for k in 0..cfg.feature_dim {
            let centroid = if k == b { 1.0 } else { 0.0 };
            features.set(i, k, centroid + noise.sample(&mut rng));
        }
    }

    // Stratified 60/20/20 within every block.
    let npb = cfg.nodes_per_block;
    let n_train = (0.6 * npb as f64).round() as usize;
    let n_val = (0.2 * npb as f64).round() as usize;
    let mut splits = vec![Split::None; n];
    for b in 0..cfg.blocks {
        let mut members: Vec<usize> = (b * npb..(b + 1) * npb).collect();
        members.shuffle(&mut rng);
        for (rank, &node) in members.iter().enumerate() {
            splits[node] = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    Ok(Draw {
        graph,
        features,
        splits,
        rng,
    })
}

/// Symmetric SBM with one-hot block centroids plus Gaussian noise as
/// features and block ids as labels. A pure function of `cfg`.
pub fn sbm_generate(cfg: &SbmConfig) -> Result<NodeDataset> {
    let d = draw_structure(cfg)?;
    let classes = (0..cfg.n_nodes()).map(|i| cfg.block_of(i)).collect();
    NodeDataset::new(
        d.graph,
        d.features,
        Labels::MultiClass {
            n_classes: cfg.blocks,
            classes,
        },
        d.splits,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiLabelSbmConfig {
    #[serde(flatten)]
    pub base: SbmConfig,
    /// `blocks × n_labels` Bernoulli probabilities; label `l` of a node in
    /// block `b` is on with probability `label_probs[b][l]`.
    pub label_probs: Vec<Vec<f64>>,
}

/// Per-block label probabilities drawn uniformly from `[0, 1)`.
pub fn random_label_probs(blocks: usize, n_labels: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6c61_6265_6c73);
    (0..blocks)
        .map(|_| (0..n_labels).map(|_| rng.random::<f64>()).collect())
        .collect()
}

pub fn multilabel_sbm_generate(cfg: &MultiLabelSbmConfig) -> Result<NodeDataset> {
    let base = &cfg.base;
    if cfg.label_probs.len() != base.blocks {
        return Err(Error::Contract(format!(
            "label_probs has {} rows for {} blocks",
            cfg.label_probs.len(),
            base.blocks
        )));
    }
    let n_labels = cfg.label_probs.first().map_or(0, Vec::len);
    if n_labels == 0 || cfg.label_probs.iter().any(|r| r.len() != n_labels) {
        return Err(Error::Contract("label_probs rows must share a non-zero width".into()));
    }
    if cfg
        .label_probs
        .iter()
        .flatten()
        .any(|p| !(0.0..=1.0).contains(p))
    {
        return Err(Error::Contract("label probabilities must lie in [0, 1]".into()));
    }
    let mut d = draw_structure(base)?;
    let n = base.n_nodes();
    let mut matrix = vec![0u8; n * n_labels];
    for i in 0..n {
        let probs = &cfg.label_probs[base.block_of(i)];
        for (l, &p) in probs.iter().enumerate() {
            matrix[i * n_labels + l] = u8::from(d.rng.random::<f64>() < p);
        }
    }
    NodeDataset::new(
        d.graph,
        d.features,
        Labels::MultiLabel { n_labels, matrix },
        d.splits,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disjoint_cliques() {
        let cfg = SbmConfig {
            blocks: 2,
            nodes_per_block: 3,
            p_in: 1.0,
            p_out: 0.0,
            feature_dim: 2,
            noise_sigma: 0.1,
            seed: 3,
        };
        let ds = sbm_generate(&cfg).unwrap();
        let g = ds.graph();
        assert_eq!(g.n_edges(), 12);
        for i in 0..6 {
            for j in 0..6 {
                if i != j {
                    assert_eq!(g.has_edge(i, j), i / 3 == j / 3);
                }
            }
        }
    }

    #[test]
    fn bad_probabilities_rejected() {
        let cfg = SbmConfig {
            p_in: 0.1,
            p_out: 0.2,
            ..SbmConfig::default()
        };
        assert!(matches!(sbm_generate(&cfg), Err(Error::Contract(_))));
        let cfg = SbmConfig {
            nodes_per_block: 0,
            ..SbmConfig::default()
        };
        assert!(sbm_generate(&cfg).is_err());
    }

    #[test]
    fn stratified_split_counts() {
        let ds = sbm_generate(&SbmConfig::default()).unwrap();
        for b in 0..4 {
            let count = |s| (b * 50..(b + 1) * 50).filter(|&i| ds.splits()[i] == s).count();
            assert_eq!(count(Split::Train), 30);
            assert_eq!(count(Split::Val), 10);
            assert_eq!(count(Split::Test), 10);
        }
    }

    #[test]
    fn multilabel_extremes() {
        let base = SbmConfig {
            blocks: 2,
            nodes_per_block: 5,
            p_in: 0.5,
            p_out: 0.1,
            feature_dim: 2,
            noise_sigma: 0.5,
            seed: 1,
        };
        for (p, want) in [(1.0, 1u8), (0.0, 0u8)] {
            let cfg = MultiLabelSbmConfig {
                base: base.clone(),
                label_probs: vec![vec![p; 4]; 2],
            };
            let ds = multilabel_sbm_generate(&cfg).unwrap();
            match ds.labels() {
                Labels::MultiLabel { matrix, .. } => assert!(matrix.iter().all(|&v| v == want)),
                _ => panic!("expected multi-label"),
            }
        }
    }
}
