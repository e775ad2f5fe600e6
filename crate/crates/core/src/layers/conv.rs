use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{glorot, GraphContext, Module};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    None,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::None => x,
        }
    }
}

fn check_width(tape: &Tape, h: Var, d_in: usize, op: &'static str) -> Result<()> {
    let shape = tape.shape(h);
    if shape.len() != 2 || shape[1] != d_in {
        return Err(Error::dim(op, shape, &[d_in]));
    }
    Ok(())
}

/// Symmetric-normalized graph convolution:
/// `act(D̂^{-1/2} Â D̂^{-1/2} H W + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GcnConv {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl GcnConv {
    pub fn new(d_in: usize, d_out: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        Self {
            weight: glorot(d_in, d_out, rng),
            bias: Tensor::zeros(&[d_out]),
            activation,
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn d_out(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, tape: &mut Tape, ctx: &GraphContext, h: Var) -> Result<Var> {
        let p = tape.bind(&self.params());
        self.apply(tape, &p, ctx, h)
    }

    /// Forward pass with parameters already on the tape as `[weight, bias]`.
    pub fn apply(&self, tape: &mut Tape, p: &[Var], ctx: &GraphContext, h: Var) -> Result<Var> {
        check_width(tape, h, self.d_in(), "gcn_forward")?;
        let norm = tape.constant(ctx.gcn_norm().clone());
        let hw = tape.matmul(h, p[0])?;
        let agg = tape.edge_aggregate(norm, hw, ctx.edges())?;
        let out = tape.add(agg, p[1])?;
        Ok(self.activation.apply(tape, out))
    }
}

impl Module for GcnConv {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// GraphSAGE convolution with a mean aggregator:
/// `act(H W_self + mean_{j ∈ N(i)\{i}} H_j W_neigh + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SageConv {
    pub weight_self: Tensor,
    pub weight_neigh: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl SageConv {
    pub fn new(d_in: usize, d_out: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        Self {
            weight_self: glorot(d_in, d_out, rng),
            weight_neigh: glorot(d_in, d_out, rng),
            bias: Tensor::zeros(&[d_out]),
            activation,
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight_self.rows()
    }

    pub fn d_out(&self) -> usize {
        self.weight_self.cols()
    }

    pub fn forward(&self, tape: &mut Tape, ctx: &GraphContext, h: Var) -> Result<Var> {
        let p = tape.bind(&self.params());
        self.apply(tape, &p, ctx, h)
    }

    /// Parameters on the tape as `[weight_self, weight_neigh, bias]`.
    pub fn apply(&self, tape: &mut Tape, p: &[Var], ctx: &GraphContext, h: Var) -> Result<Var> {
        check_width(tape, h, self.d_in(), "sage_forward")?;
        let mean_w = tape.constant(ctx.sage_mean().clone());
        let own = tape.matmul(h, p[0])?;
        let mean = tape.edge_aggregate(mean_w, h, ctx.edges())?;
        let neigh = tape.matmul(mean, p[1])?;
        let sum = tape.add(own, neigh)?;
        let out = tape.add(sum, p[2])?;
        Ok(self.activation.apply(tape, out))
    }
}

impl Module for SageConv {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.weight_self, &self.weight_neigh, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight_self, &mut self.weight_neigh, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::CsrGraph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run_gcn(layer: &GcnConv, g: &CsrGraph, h: &Tensor) -> Tensor {
        let ctx = GraphContext::new(g);
        let mut tape = Tape::new();
        let x = tape.constant(h.clone());
        let y = layer.forward(&mut tape, &ctx, x).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn gcn_single_node_identity() {
        let layer = GcnConv {
            weight: Tensor::eye(3),
            bias: Tensor::zeros(&[3]),
            activation: Activation::None,
        };
        let h = Tensor::matrix(1, 3, vec![0.5, -2.0, 3.0]).unwrap();
        let out = run_gcn(&layer, &CsrGraph::empty(1, true), &h);
        assert_eq!(out, h);
    }

    #[test]
    fn gcn_two_clique_identical_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = GcnConv::new(2, 4, Activation::Relu, &mut rng);
        let g = CsrGraph::from_edges(2, &[(0, 1)], true).unwrap();
        let h = Tensor::matrix(2, 2, vec![0.3, 0.7, 0.3, 0.7]).unwrap();
        let out = run_gcn(&layer, &g, &h);
        assert_eq!(out.row(0), out.row(1));
    }

    #[test]
    fn gcn_rejects_width_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = GcnConv::new(3, 2, Activation::Relu, &mut rng);
        let ctx = GraphContext::new(&CsrGraph::empty(2, true));
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 4]));
        assert!(matches!(
            layer.forward(&mut tape, &ctx, x),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn gcn_param_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(GcnConv::new(4, 3, Activation::Relu, &mut rng).param_count(), 15);
        assert_eq!(SageConv::new(4, 3, Activation::Relu, &mut rng).param_count(), 27);
    }

    #[test]
    fn sage_isolated_node_uses_zero_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut layer = SageConv::new(2, 2, Activation::None, &mut rng);
        layer.bias = Tensor::vector(vec![0.1, -0.2]);
        let ctx = GraphContext::new(&CsrGraph::empty(1, true));
        let h = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(h.clone());
        let y = layer.forward(&mut tape, &ctx, x).unwrap();
        let want = h.matmul(&layer.weight_self).unwrap();
        for k in 0..2 {
            assert!((tape.value(y).get(0, k) - (want.get(0, k) + layer.bias.data()[k])).abs() < 1e-15);
        }
    }

    #[test]
    fn sage_equal_features_on_triangle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = SageConv::new(2, 3, Activation::None, &mut rng);
        let g = CsrGraph::from_edges(3, &[(0, 1), (1, 2), (0, 2)], true).unwrap();
        let ctx = GraphContext::new(&g);
        let h = Tensor::matrix(3, 2, vec![0.4, -0.1, 0.4, -0.1, 0.4, -0.1]).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(h.clone());
        let y = layer.forward(&mut tape, &ctx, x).unwrap();
        // Neighbor mean equals the node's own feature.
        let sum_w = Tensor::new(
            vec![2, 3],
            layer
                .weight_self
                .data()
                .iter()
                .zip(layer.weight_neigh.data())
                .map(|(a, b)| a + b)
                .collect(),
        )
        .unwrap();
        let want = h.matmul(&sum_w).unwrap();
        assert!(tape.value(y).max_abs_diff(&want) < 1e-15);
    }
}
