//! Dense reference implementations used as test oracles. Everything here
//! works on plain `Vec<Vec<f64>>` and never touches the tape.
#![allow(dead_code)]

pub mod criteria;

use gkedm::graph::CsrGraph;
use gkedm::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to_mat(t: &Tensor) -> Mat {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn from_mat(m: &Mat) -> Tensor {
    Tensor::from_rows(m).unwrap()
}

pub fn uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

pub fn uniform_vec(n: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::vector((0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len());
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        assert_eq!(a[i].len(), k);
        for p in 0..k {
            for j in 0..m {
                out[i][j] += a[i][p] * b[p][j];
            }
        }
    }
    out
}

pub fn add_bias(a: &Mat, b: &[f64]) -> Mat {
    a.iter()
        .map(|r| r.iter().zip(b).map(|(x, y)| x + y).collect())
        .collect()
}

pub fn relu(a: &Mat) -> Mat {
    a.iter().map(|r| r.iter().map(|x| x.max(0.0)).collect()).collect()
}

pub fn random_graph(n: usize, p: f64, rng: &mut impl Rng) -> CsrGraph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    CsrGraph::from_edges(n, &edges, true).unwrap()
}

/// Every simple graph on 4 labelled nodes: all 64 subsets of the 6 edges.
pub fn all_four_node_graphs() -> Vec<CsrGraph> {
    let pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
    (0..1u32 << pairs.len())
        .map(|mask| {
            let edges: Vec<(usize, usize)> = pairs
                .iter()
                .enumerate()
                .filter(|(k, _)| mask >> k & 1 == 1)
                .map(|(_, &e)| e)
                .collect();
            CsrGraph::from_edges(4, &edges, true).unwrap()
        })
        .collect()
}

pub fn random_permutation(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        p.swap(i, j);
    }
    p
}

/// Rows moved so that row `i` of `m` lands at `perm[i]`.
pub fn permute_rows(m: &Mat, perm: &[usize]) -> Mat {
    let mut out = m.clone();
    for (i, &p) in perm.iter().enumerate() {
        out[p] = m[i].clone();
    }
    out
}

/// Dense adjacency with self-loops: `a[i][j]` is true iff `j ∈ N(i) ∪ {i}`.
pub fn adjacency_with_self(g: &CsrGraph) -> Vec<Vec<bool>> {
    let n = g.n_nodes();
    let mut a = vec![vec![false; n]; n];
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = true;
        for &j in g.neighbors(i) {
            row[j] = true;
        }
    }
    a
}

pub fn gcn_oracle(g: &CsrGraph, h: &Mat, w: &Mat, b: &[f64], act: bool) -> Mat {
    let a = adjacency_with_self(g);
    let n = a.len();
    let deg: Vec<f64> = a.iter().map(|r| r.iter().filter(|&&x| x).count() as f64).collect();
    let mut prop = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if a[i][j] {
                prop[i][j] = 1.0 / (deg[i].sqrt() * deg[j].sqrt());
            }
        }
    }
    let out = add_bias(&matmul(&matmul(&prop, h), w), b);
    if act {
        relu(&out)
    } else {
        out
    }
}

pub fn sage_oracle(g: &CsrGraph, h: &Mat, w_self: &Mat, w_neigh: &Mat, b: &[f64], act: bool) -> Mat {
    let n = h.len();
    let d = h[0].len();
    let mut mean = vec![vec![0.0; d]; n];
    for i in 0..n {
        let nb: Vec<usize> = g.neighbors(i).iter().copied().filter(|&j| j != i).collect();
        for &j in &nb {
            for k in 0..d {
                mean[i][k] += h[j][k] / nb.len() as f64;
            }
        }
    }
    let own = matmul(h, w_self);
    let other = matmul(&mean, w_neigh);
    let out: Mat = own
        .iter()
        .zip(&other)
        .map(|(a, c)| a.iter().zip(c).zip(b).map(|((x, y), z)| x + y + z).collect())
        .collect();
    if act {
        relu(&out)
    } else {
        out
    }
}

pub struct AttentionParams {
    pub pe_map: Mat,
    pub wq: Mat,
    pub bq: Vec<f64>,
    pub wk: Mat,
    pub bk: Vec<f64>,
    pub wv: Mat,
    pub bv: Vec<f64>,
}

pub struct DenseAttention {
    pub out: Mat,
    /// Per head, a full `n × n` matrix; zero off the neighborhood.
    pub attn: Vec<Mat>,
    pub q: Mat,
    pub k: Mat,
    pub v: Mat,
}

/// Dense masked multi-head attention: every pair is scored, then pairs outside
/// `N(i) ∪ {i}` are masked to −∞ before the row softmax.
pub fn attention_oracle(g: &CsrGraph, h: &Mat, pe: &Mat, p: &AttentionParams, n_heads: usize) -> DenseAttention {
    let n = h.len();
    let d = h[0].len();
    let dh = d / n_heads;
    let shift = matmul(pe, &p.pe_map);
    let h_hat: Mat = h
        .iter()
        .zip(&shift)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
        .collect();
    let q = add_bias(&matmul(&h_hat, &p.wq), &p.bq);
    let k = add_bias(&matmul(&h_hat, &p.wk), &p.bk);
    let v = add_bias(&matmul(&h_hat, &p.wv), &p.bv);
    let mask = adjacency_with_self(g);

    let mut out = h_hat.clone();
    let mut attn = Vec::new();
    for head in 0..n_heads {
        let cols = head * dh..(head + 1) * dh;
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| {
                    if mask[i][j] {
                        cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt()
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect();
            let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            for j in 0..n {
                a[i][j] = e[j] / z;
            }
            for c in cols.clone() {
                out[i][c] += (0..n).map(|j| a[i][j] * v[j][c]).sum::<f64>();
            }
        }
        attn.push(a);
    }
    DenseAttention { out, attn, q, k, v }
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let mx = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - mx).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

/// `Σ p (ln p − ln q)` with both logs clamped at `1e-12`.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| a * (a.max(1e-12).ln() - b.max(1e-12).ln()))
        .sum()
}

pub fn cross_entropy_oracle(z: &Mat, labels: &[usize], mask: &[bool]) -> f64 {
    let mut total = 0.0;
    let mut count = 0;
    for i in 0..z.len() {
        if mask[i] {
            let mx = z[i].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + z[i].iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            total += lse - z[i][labels[i]];
            count += 1;
        }
    }
    total / count as f64
}

pub fn bce_oracle(z: &Mat, y: &Mat, mask: &[bool]) -> f64 {
    let mut total = 0.0;
    let mut count = 0;
    for i in 0..z.len() {
        if mask[i] {
            for (zl, yl) in z[i].iter().zip(&y[i]) {
                let s = 1.0 / (1.0 + (-zl).exp());
                total -= yl * s.ln() + (1.0 - yl) * (1.0 - s).ln();
                count += 1;
            }
        }
    }
    total / count as f64
}

pub fn kd_oracle(zt: &Mat, zs: &Mat, t: f64) -> f64 {
    let n = zt.len() as f64;
    zt.iter()
        .zip(zs)
        .map(|(a, b)| {
            let p = softmax(&a.iter().map(|x| x / t).collect::<Vec<_>>());
            let q = softmax(&b.iter().map(|x| x / t).collect::<Vec<_>>());
            kl(&p, &q)
        })
        .sum::<f64>()
        * t
        * t
        / n
}

pub fn fitnet_oracle(hs: &Mat, ht: &Mat, adapter: &Mat, mask: &[bool]) -> f64 {
    let mapped = matmul(hs, adapter);
    let mut total = 0.0;
    let mut count = 0;
    for i in 0..hs.len() {
        if mask[i] {
            for (a, b) in mapped[i].iter().zip(&ht[i]) {
                total += (a - b) * (a - b);
                count += 1;
            }
        }
    }
    total / count as f64
}

/// Brute-force LSP: per node, softmax of kernel values over its non-self
/// neighbors, `KL(student ‖ teacher)`, summed and divided by `n`.
pub fn lsp_oracle(g: &CsrGraph, hs: &Mat, ht: &Mat, kernel: impl Fn(&[f64], &[f64]) -> f64) -> f64 {
    let n = g.n_nodes();
    let mut total = 0.0;
    for i in 0..n {
        let nb: Vec<usize> = (0..n).filter(|&j| j != i && g.has_edge(i, j)).collect();
        if nb.is_empty() {
            continue;
        }
        let ps = softmax(&nb.iter().map(|&j| kernel(&hs[i], &hs[j])).collect::<Vec<_>>());
        let pt = softmax(&nb.iter().map(|&j| kernel(&ht[i], &ht[j])).collect::<Vec<_>>());
        total += kl(&ps, &pt);
    }
    total / n as f64
}

pub fn rbf(sigma: f64) -> impl Fn(&[f64], &[f64]) -> f64 {
    move |a, b| {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        (-d2 / (2.0 * sigma * sigma)).exp()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean over nodes and heads of `KL(A_T[i,·] ‖ A_S[i,·])` on dense maps.
pub fn attention_kl_oracle(teacher: &[Mat], student: &[Mat]) -> f64 {
    let n = teacher[0].len();
    let mut total = 0.0;
    for (t, s) in teacher.iter().zip(student) {
        for i in 0..n {
            total += kl(&t[i], &s[i]);
        }
    }
    total / (n * teacher.len()) as f64
}

/// Relation distributions of one head: per node, softmax over `N(i) ∪ {i}` of
/// `⟨x_i, x_j⟩/√d`.
pub fn relation_dists(g: &CsrGraph, x: &Mat) -> Vec<Vec<f64>> {
    let a = adjacency_with_self(g);
    let d = x[0].len() as f64;
    (0..x.len())
        .map(|i| {
            let nb: Vec<usize> = (0..x.len()).filter(|&j| a[i][j]).collect();
            softmax(&nb.iter().map(|&j| dot(&x[i], &x[j]) / d.sqrt()).collect::<Vec<_>>())
        })
        .collect()
}

pub fn relation_kl_oracle(g: &CsrGraph, teacher: &[Mat], student: &[Mat]) -> f64 {
    let n = g.n_nodes();
    let mut total = 0.0;
    for (t, s) in teacher.iter().zip(student) {
        let (rt, rs) = (relation_dists(g, t), relation_dists(g, s));
        for i in 0..n {
            total += kl(&rt[i], &rs[i]);
        }
    }
    total / (n * teacher.len()) as f64
}

/// Head `h` of width `dh` as its own matrix.
pub fn head_cols(m: &Mat, h: usize, dh: usize) -> Mat {
    m.iter().map(|r| r[h * dh..(h + 1) * dh].to_vec()).collect()
}
