use rand::Rng;

use super::{glorot, Module};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// One-hidden-layer MLP producing raw logits.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl ClassifierHead {
    pub fn new(d_in: usize, hidden: usize, n_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            w1: glorot(d_in, hidden, rng),
            b1: Tensor::zeros(&[hidden]),
            w2: glorot(hidden, n_out, rng),
            b2: Tensor::zeros(&[n_out]),
        }
    }

    pub fn d_in(&self) -> usize {
        self.w1.rows()
    }

    pub fn n_out(&self) -> usize {
        self.w2.cols()
    }

    pub fn forward(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        let p = tape.bind(&self.params());
        self.apply(tape, &p, h)
    }

    pub fn apply(&self, tape: &mut Tape, p: &[Var], h: Var) -> Result<Var> {
        let shape = tape.shape(h);
        if shape.len() != 2 || shape[1] != self.d_in() {
            return Err(Error::dim("classifier_forward", shape, &[self.d_in()]));
        }
        let z = tape.matmul(h, p[0])?;
        let z = tape.add(z, p[1])?;
        let z = tape.relu(z);
        let z = tape.matmul(z, p[2])?;
        tape.add(z, p[3])
    }
}

impl Module for ClassifierHead {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}
