use std::sync::Arc;

use crate::error::{Error, Result};

/// Immutable directed graph in compressed-sparse-row form.
///
/// Neighbor lists are sorted ascending without duplicates. A graph flagged
/// `symmetric` contains `(j, i)` for every stored `(i, j)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsrGraph {
    n_nodes: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    symmetric: bool,
}

impl CsrGraph {
    /// Builds a graph from an edge list. With `symmetric` set every edge is
    /// stored in both directions; duplicates collapse.
    pub fn from_edges(n_nodes: usize, edges: &[(usize, usize)], symmetric: bool) -> Result<Self> {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
        for &(i, j) in edges {
            if i >= n_nodes || j >= n_nodes {
                return Err(Error::Validation(format!(
                    "edge ({i}, {j}) references a node outside [0, {n_nodes})"
                )));
            }
            adj[i].push(j);
            if symmetric && i != j {
                adj[j].push(i);
            }
        }
        Ok(Self::from_adjacency(adj, symmetric))
    }

    fn from_adjacency(mut adj: Vec<Vec<usize>>, symmetric: bool) -> Self {
        let n_nodes = adj.len();
        let mut row_ptr = Vec::with_capacity(n_nodes + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
            col_idx.extend_from_slice(list);
            row_ptr.push(col_idx.len());
        }
        Self {
            n_nodes,
            row_ptr,
            col_idx,
            symmetric,
        }
    }

    /// Validates raw CSR arrays.
    pub fn from_csr(
        n_nodes: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        symmetric: bool,
    ) -> Result<Self> {
        if row_ptr.len() != n_nodes + 1 || row_ptr[0] != 0 || row_ptr[n_nodes] != col_idx.len() {
            return Err(Error::Validation("row_ptr does not delimit col_idx".into()));
        }
        for i in 0..n_nodes {
            if row_ptr[i] > row_ptr[i + 1] {
                return Err(Error::Validation(format!("row_ptr decreases at {i}")));
            }
            let list = &col_idx[row_ptr[i]..row_ptr[i + 1]];
            if list.iter().any(|&j| j >= n_nodes) {
                return Err(Error::Validation(format!("node {i} has a dangling neighbor")));
            }
            if list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Validation(format!(
                    "neighbors of node {i} are not strictly ascending"
                )));
            }
        }
        let g = Self {
            n_nodes,
            row_ptr,
            col_idx,
            symmetric,
        };
        if symmetric && !g.is_structurally_symmetric() {
            return Err(Error::Validation("graph flagged symmetric is not".into()));
        }
        Ok(g)
    }

    pub fn empty(n_nodes: usize, symmetric: bool) -> Self {
        Self {
            n_nodes,
            row_ptr: vec![0; n_nodes + 1],
            col_idx: Vec::new(),
            symmetric,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.col_idx.len()
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors(i).binary_search(&j).is_ok()
    }

    /// All edges `(src, dst)` in storage order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n_nodes).flat_map(move |i| self.neighbors(i).iter().map(move |&j| (i, j)))
    }

    /// True when every node carries a self-loop.
    pub fn has_self_loops(&self) -> bool {
        (0..self.n_nodes).all(|i| self.has_edge(i, i))
    }

    pub fn is_structurally_symmetric(&self) -> bool {
        self.edges().all(|(i, j)| self.has_edge(j, i))
    }

    pub fn add_self_loops(&self) -> CsrGraph {
        let adj = (0..self.n_nodes)
            .map(|i| {
                let mut l = self.neighbors(i).to_vec();
                l.push(i);
                l
            })
            .collect();
        Self::from_adjacency(adj, self.symmetric)
    }

    pub fn remove_self_loops(&self) -> CsrGraph {
        let adj = (0..self.n_nodes)
            .map(|i| self.neighbors(i).iter().copied().filter(|&j| j != i).collect())
            .collect();
        Self::from_adjacency(adj, self.symmetric)
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<CsrGraph> {
        check_permutation(perm, self.n_nodes)?;
        let mut adj = vec![Vec::new(); self.n_nodes];
        for (i, j) in self.edges() {
            adj[perm[i]].push(perm[j]);
        }
        Ok(Self::from_adjacency(adj, self.symmetric))
    }

    pub fn edge_index(&self) -> EdgeIndex {
        let src: Vec<usize> = (0..self.n_nodes)
            .flat_map(|i| std::iter::repeat_n(i, self.degree(i)))
            .collect();
        EdgeIndex {
            n_nodes: self.n_nodes,
            row_ptr: self.row_ptr.clone().into(),
            src: src.into(),
            dst: self.col_idx.clone().into(),
        }
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::Contract(format!(
            "permutation has length {} for {n} nodes",
            perm.len()
        )));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::Contract("permutation is not a bijection".into()));
        }
    }
    Ok(())
}

/// Flattened edge arrays shared with tape operations. Edges appear in CSR
/// order, so the edges of node `i` occupy `row_ptr[i]..row_ptr[i + 1]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeIndex {
    n_nodes: usize,
    row_ptr: Arc<[usize]>,
    src: Arc<[usize]>,
    dst: Arc<[usize]>,
}

impl EdgeIndex {
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.dst.len()
    }

    pub fn row_ptr(&self) -> &Arc<[usize]> {
        &self.row_ptr
    }

    pub fn src(&self) -> &Arc<[usize]> {
        &self.src
    }

    pub fn dst(&self) -> &Arc<[usize]> {
        &self.dst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> CsrGraph {
        CsrGraph::from_edges(3, &[(0, 1), (1, 2)], true).unwrap()
    }

    #[test]
    fn self_loops_on_edgeless_graph() {
        let g = CsrGraph::empty(3, true).add_self_loops();
        assert_eq!(g.n_edges(), 3);
        assert!(g.has_self_loops());
    }

    #[test]
    fn self_loops_are_idempotent() {
        let g = path3().add_self_loops();
        assert_eq!(g.add_self_loops(), g);
    }

    #[test]
    fn path_graph_edge_count() {
        let g = path3();
        assert_eq!(g.n_edges(), 4);
        assert_eq!(g.add_self_loops().n_edges(), 7);
    }

    #[test]
    fn symmetric_storage_and_sorting() {
        let g = CsrGraph::from_edges(4, &[(3, 0), (0, 2), (0, 2), (1, 0)], true).unwrap();
        assert_eq!(g.neighbors(0), &[1, 2, 3]);
        assert!(g.is_structurally_symmetric());
        assert_eq!(g.row_ptr()[4], g.n_edges());
    }

    #[test]
    fn dangling_edge_rejected() {
        let err = CsrGraph::from_edges(3, &[(0, 99)], true).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn from_csr_checks_invariants() {
        assert!(CsrGraph::from_csr(2, vec![0, 1, 2], vec![1, 0], true).is_ok());
        assert!(CsrGraph::from_csr(2, vec![0, 1, 1], vec![1], true).is_err());
        assert!(CsrGraph::from_csr(2, vec![0, 2, 2], vec![1, 1], false).is_err());
    }

    #[test]
    fn permutation_must_be_bijective() {
        let g = path3();
        assert!(g.permute(&[0, 0, 1]).is_err());
        assert!(g.permute(&[0, 1]).is_err());
        let p = g.permute(&[2, 0, 1]).unwrap();
        assert!(p.has_edge(2, 0) && p.has_edge(0, 1));
    }

    #[test]
    fn edge_index_matches_csr() {
        let g = path3().add_self_loops();
        let e = g.edge_index();
        let pairs: Vec<_> = e.src().iter().copied().zip(e.dst().iter().copied()).collect();
        let direct: Vec<_> = g.edges().collect();
        assert_eq!(pairs, direct);
    }
}
