//! Normalized Laplacian, Jacobi eigensolver and Laplacian positional encoding.

use serde::{Deserialize, Serialize};

use super::csr::CsrGraph;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAX_SWEEPS: usize = 100;
const OFF_DIAGONAL_TOL: f64 = 1e-10;
const SYMMETRY_TOL: f64 = 1e-10;
/// Eigenvalues closer than this to the previously kept one are repeats.
pub const DISTINCT_EIGENVALUE_GAP: f64 = 1e-8;

/// `L = I − D^{-1/2} A D^{-1/2}` on the graph with self-loops removed.
/// Isolated nodes keep `L_ii = 1`.
pub fn normalized_laplacian(g: &CsrGraph) -> Result<Tensor> {
    if !g.is_symmetric() {
        return Err(Error::Contract(
            "normalized Laplacian needs a symmetric graph".into(),
        ));
    }
    let n = g.n_nodes();
    let deg: Vec<f64> = (0..n)
        .map(|i| g.neighbors(i).iter().filter(|&&j| j != i).count() as f64)
        .collect();
    let mut l = Tensor::eye(n);
    for (i, j) in g.edges() {
        if i != j {
            l.set(i, j, -1.0 / (deg[i] * deg[j]).sqrt());
        }
    }
    Ok(l)
}

/// Eigenpairs of a symmetric matrix, eigenvalues ascending. Column `k` of
/// `vectors` belongs to `values[k]`.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Tensor,
    pub sweeps: usize,
}

fn off_diagonal_norm(a: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[i * n + j] * a[i * n + j];
            }
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi rotations until the off-diagonal Frobenius norm drops
/// below `1e-10`.
pub fn symmetric_eigen(m: &Tensor) -> Result<SymmetricEigen> {
    if !m.is_matrix() || m.rows() != m.cols() {
        return Err(Error::dim("symmetric_eigen", m.shape(), &[]));
    }
    let n = m.rows();
    for i in 0..n {
        for j in i + 1..n {
            if (m.get(i, j) - m.get(j, i)).abs() > SYMMETRY_TOL {
                return Err(Error::Contract(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    let mut a = m.data().to_vec();
    let mut v = Tensor::eye(n).into_data();

    let mut sweeps = 0;
    while off_diagonal_norm(&a, n) >= OFF_DIAGONAL_TOL {
        if sweeps == MAX_SWEEPS {
            return Err(Error::Numeric(format!(
                "Jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps"
            )));
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[x * n + x].total_cmp(&a[y * n + y]));
    let values = order.iter().map(|&k| a[k * n + k]).collect();
    let mut vectors = Tensor::zeros(&[n, n]);
    for (col, &k) in order.iter().enumerate() {
        for r in 0..n {
            vectors.set(r, col, v[r * n + k]);
        }
    }
    Ok(SymmetricEigen {
        values,
        vectors,
        sweeps,
    })
}

/// How eigenvector signs are pinned down.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignRule {
    /// Flip so the entry of largest magnitude is positive (first such entry
    /// on ties).
    #[default]
    LargestPositive,
    /// Leave whatever sign the solver produced.
    AsComputed,
}

/// Laplacian positional encoding: one eigenvector column per distinct
/// eigenvalue, smallest first, zero-padded to `m` columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeMatrix {
    pub values: Tensor,
    /// Eigenvalues of the kept columns, strictly increasing. Shorter than `m`
    /// when the graph has fewer distinct eigenvalues.
    pub eigenvalues: Vec<f64>,
}

impl PeMatrix {
    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn n_nodes(&self) -> usize {
        self.values.rows()
    }

    /// Rows reordered so node `i` moves to `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<PeMatrix> {
        super::csr::check_permutation(perm, self.n_nodes())?;
        let mut inv = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        Ok(PeMatrix {
            values: self.values.select_rows(&inv),
            eigenvalues: self.eigenvalues.clone(),
        })
    }
}

pub fn laplacian_pe(g: &CsrGraph, m: usize, sign_rule: SignRule) -> Result<PeMatrix> {
    if m == 0 {
        return Err(Error::Contract("positional encoding width m must be ≥ 1".into()));
    }
    let n = g.n_nodes();
    let eig = symmetric_eigen(&normalized_laplacian(g)?)?;
    let mut kept: Vec<usize> = Vec::with_capacity(m);
    let mut last: Option<f64> = None;
    for (k, &lambda) in eig.values.iter().enumerate() {
        if kept.len() == m {
            break;
        }
        if last.is_none_or(|prev| lambda - prev > DISTINCT_EIGENVALUE_GAP) {
            kept.push(k);
            last = Some(lambda);
        }
    }
    let mut values = Tensor::zeros(&[n, m]);
    for (col, &k) in kept.iter().enumerate() {
        let mut column: Vec<f64> = (0..n).map(|r| eig.vectors.get(r, k)).collect();
        if sign_rule == SignRule::LargestPositive {
            let hi = column.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()));
            if let Some(&pivot) = column.iter().find(|x| x.abs() >= hi - 1e-12) {
                if pivot < 0.0 {
                    column.iter_mut().for_each(|x| *x = -*x);
                }
            }
        }
        for (r, x) in column.into_iter().enumerate() {
            values.set(r, col, x);
        }
    }
    Ok(PeMatrix {
        values,
        eigenvalues: kept.iter().map(|&k| eig.values[k]).collect(),
    })
}
