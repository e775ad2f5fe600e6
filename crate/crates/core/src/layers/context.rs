use crate::graph::{CsrGraph, EdgeIndex};
use crate::tensor::Tensor;

/// A graph with mandatory self-loops plus the per-edge coefficients the
/// convolutions need, computed once.
#[derive(Clone, Debug)]
pub struct GraphContext {
    graph: CsrGraph,
    edges: EdgeIndex,
    gcn_norm: Tensor,
    sage_mean: Tensor,
}

impl GraphContext {
    /// Adds self-loops to `g` (a no-op if present) and precomputes edge weights.
    pub fn new(g: &CsrGraph) -> Self {
        let graph = g.add_self_loops();
        let edges = graph.edge_index();
        let n = graph.n_nodes();

        let deg: Vec<f64> = (0..n).map(|i| graph.degree(i) as f64).collect();
        let gcn_norm = edges
            .src()
            .iter()
            .zip(edges.dst().iter())
            .map(|(&i, &j)| 1.0 / (deg[i] * deg[j]).sqrt())
            .collect();

        let others: Vec<f64> = (0..n).map(|i| (graph.degree(i) - 1) as f64).collect();
        let sage_mean = edges
            .src()
            .iter()
            .zip(edges.dst().iter())
            .map(|(&i, &j)| if i == j { 0.0 } else { 1.0 / others[i] })
            .collect();

        Self {
            graph,
            edges,
            gcn_norm: Tensor::vector(gcn_norm),
            sage_mean: Tensor::vector(sage_mean),
        }
    }

    pub fn graph(&self) -> &CsrGraph {
        &self.graph
    }

    pub fn edges(&self) -> &EdgeIndex {
        &self.edges
    }

    pub fn n_nodes(&self) -> usize {
        self.graph.n_nodes()
    }

    /// `1/√(d̂_i d̂_j)` per edge, degrees counting the self-loop.
    pub fn gcn_norm(&self) -> &Tensor {
        &self.gcn_norm
    }

    /// `1/|N(i) \ {i}|` on non-self edges, zero on self-loops.
    pub fn sage_mean(&self) -> &Tensor {
        &self.sage_mean
    }
}
