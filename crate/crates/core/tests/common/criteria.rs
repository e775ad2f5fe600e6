//! Checks shared by the integration tests and the acceptance run. Each
//! returns a one-line summary on success and a diagnostic on failure.
#![allow(dead_code)]

use gkedm::distill::{
    attention_map_kl, attention_map_kl_value, bce_multilabel, cross_entropy, distill_total_loss, fitnet_loss,
    kd_soft_loss, lsp_loss, relation_kl, relation_kl_value, DistillConfig, LspKernel, Relation,
};
use gkedm::graph::{laplacian_pe, normalized_laplacian, symmetric_eigen, CsrGraph, PeMatrix, SignRule};
use gkedm::layers::{
    Activation, AttentionRecord, ClassifierHead, GcnConv, GkedmAttentionLayer, GraphContext, Module, SageConv,
};
use gkedm::tensor::{grad_check, Tape, Tensor, Var};
use rand::Rng;

use super::*;

pub type Outcome = Result<String, String>;

pub const GRAD_EPS: f64 = 2e-3;
pub const GRAD_TOL: f64 = 1e-4;
pub const GRAD_SEEDS: u64 = 20;

/// Pre-activations closer to zero than this are resampled so the stencil
/// never straddles the ReLU kink.
const KINK_MARGIN: f64 = 0.05;

fn min_abs(t: &Tensor) -> f64 {
    t.data().iter().fold(f64::INFINITY, |m, x| m.min(x.abs()))
}

fn weighted_sum(tape: &mut Tape, out: Var, r: &Tensor) -> gkedm::Result<Var> {
    let w = tape.constant(r.clone());
    let p = tape.mul(out, w)?;
    Ok(tape.sum(p))
}

struct Case {
    g: CsrGraph,
    n: usize,
}

fn case(rng: &mut impl Rng) -> Case {
    let n = rng.random_range(3..8);
    let g = random_graph(n, 0.5, rng);
    Case { g, n }
}

fn run_layer<F>(inputs: Vec<Tensor>, f: F) -> gkedm::Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> gkedm::Result<Var>,
{
    let r = grad_check(f, &inputs, GRAD_EPS, GRAD_TOL)?;
    Ok(r.max_rel_error)
}

fn gcn_case(seed: u64) -> gkedm::Result<f64> {
    let mut rng = rng(seed);
    loop {
        let c = case(&mut rng);
        let (d_in, d_out) = (rng.random_range(2..5), rng.random_range(2..5));
        let mut layer = GcnConv::new(d_in, d_out, Activation::None, &mut rng);
        layer.bias = uniform_vec(d_out, &mut rng);
        let h = uniform(c.n, d_in, &mut rng);
        let r = uniform(c.n, d_out, &mut rng);
        let ctx = GraphContext::new(&c.g);
        let mut t = Tape::new();
        let x = t.constant(h.clone());
        let pre = layer.forward(&mut t, &ctx, x)?;
        if min_abs(t.value(pre)) < KINK_MARGIN {
            continue;
        }
        layer.activation = Activation::Relu;
        return run_layer(vec![h, layer.weight.clone(), layer.bias.clone()], |t, v| {
            let y = layer.apply(t, &v[1..], &ctx, v[0])?;
            weighted_sum(t, y, &r)
        });
    }
}

fn sage_case(seed: u64) -> gkedm::Result<f64> {
    let mut rng = rng(seed);
    loop {
        let c = case(&mut rng);
        let (d_in, d_out) = (rng.random_range(2..5), rng.random_range(2..5));
        let mut layer = SageConv::new(d_in, d_out, Activation::None, &mut rng);
        layer.bias = uniform_vec(d_out, &mut rng);
        let h = uniform(c.n, d_in, &mut rng);
        let r = uniform(c.n, d_out, &mut rng);
        let ctx = GraphContext::new(&c.g);
        let mut t = Tape::new();
        let x = t.constant(h.clone());
        let pre = layer.forward(&mut t, &ctx, x)?;
        if min_abs(t.value(pre)) < KINK_MARGIN {
            continue;
        }
        layer.activation = Activation::Relu;
        let params: Vec<Tensor> = layer.params().into_iter().cloned().collect();
        let mut inputs = vec![h];
        inputs.extend(params);
        return run_layer(inputs, |t, v| {
            let y = layer.apply(t, &v[1..], &ctx, v[0])?;
            weighted_sum(t, y, &r)
        });
    }
}

fn head_case(seed: u64) -> gkedm::Result<f64> {
    let mut rng = rng(seed);
    loop {
        let n = rng.random_range(2..7);
        let (d_in, hidden, n_out) = (rng.random_range(2..5), rng.random_range(2..6), rng.random_range(2..4));
        let mut head = ClassifierHead::new(d_in, hidden, n_out, &mut rng);
        head.b1 = uniform_vec(hidden, &mut rng);
        head.b2 = uniform_vec(n_out, &mut rng);
        let h = uniform(n, d_in, &mut rng);
        let pre = h.matmul(&head.w1)?;
        let pre = Tensor::new(
            pre.shape().to_vec(),
            pre.data()
                .iter()
                .enumerate()
                .map(|(i, x)| x + head.b1.data()[i % hidden])
                .collect(),
        )?;
        if min_abs(&pre) < KINK_MARGIN {
            continue;
        }
        let r = uniform(n, n_out, &mut rng);
        let mut inputs = vec![h];
        inputs.extend(head.params().into_iter().cloned());
        return run_layer(inputs, |t, v| {
            let y = head.apply(t, &v[1..], v[0])?;
            weighted_sum(t, y, &r)
        });
    }
}

struct AttnCase {
    g: CsrGraph,
    ctx: GraphContext,
    pe: PeMatrix,
    layer: GkedmAttentionLayer,
    h: Tensor,
}

fn attn_case(rng: &mut impl Rng) -> gkedm::Result<AttnCase> {
    let c = case(rng);
    let n_heads = rng.random_range(1..3);
    let dh = rng.random_range(1..4);
    let m = rng.random_range(1..4);
    let mut layer = GkedmAttentionLayer::new(n_heads * dh, n_heads, m, rng)?;
    layer.bq = uniform_vec(n_heads * dh, rng);
    layer.bk = uniform_vec(n_heads * dh, rng);
    layer.bv = uniform_vec(n_heads * dh, rng);
    let pe = laplacian_pe(&c.g, m, SignRule::LargestPositive)?;
    let h = uniform(c.n, n_heads * dh, rng);
    Ok(AttnCase {
        ctx: GraphContext::new(&c.g),
        g: c.g,
        pe,
        layer,
        h,
    })
}

fn attn_inputs(a: &AttnCase) -> Vec<Tensor> {
    let mut inputs = vec![a.h.clone()];
    inputs.extend(a.layer.params().into_iter().cloned());
    inputs
}

fn gkedm_case(seed: u64) -> gkedm::Result<f64> {
    let mut rng = rng(seed);
    let a = attn_case(&mut rng)?;
    let r = uniform(a.h.rows(), a.h.cols(), &mut rng);
    run_layer(attn_inputs(&a), |t, v| {
        let (y, _) = a.layer.apply(t, &v[1..], &a.ctx, &a.pe, v[0])?;
        weighted_sum(t, y, &r)
    })
}

/// A teacher record from an independent layer of the same shape.
fn teacher_record(a: &AttnCase, rng: &mut impl Rng) -> gkedm::Result<AttentionRecord> {
    let mut other = GkedmAttentionLayer::new(a.layer.d_model(), a.layer.n_heads(), a.layer.pe_dim(), rng)?;
    other.capture = true;
    let mut t = Tape::new();
    let x = t.constant(uniform(a.h.rows(), a.h.cols(), rng));
    let (_, rec) = other.forward(&mut t, &a.ctx, &a.pe, x)?;
    Ok(rec.expect("capture on").to_record(&t))
}

fn attention_loss_case(seed: u64, which: Option<Relation>) -> gkedm::Result<f64> {
    let mut rng = rng(seed);
    let a = attn_case(&mut rng)?;
    let teacher = teacher_record(&a, &mut rng)?;
    run_layer(attn_inputs(&a), |t, v| {
        let (_, rec) = a.layer.apply(t, &v[1..], &a.ctx, &a.pe, v[0])?;
        let rec = rec.expect("capture on");
        match which {
            None => attention_map_kl(t, &teacher, &rec),
            Some(r) => relation_kl(t, &teacher, &rec, r),
        }
    })
}

fn total_loss_case(seed: u64) -> gkedm::Result<f64> {
    let mut rng = rng(seed);
    let a = attn_case(&mut rng)?;
    let teacher = teacher_record(&a, &mut rng)?;
    let cfg = DistillConfig {
        alpha: rng.random_range(0.05..2.0),
        relations: vec![Relation::Value, Relation::Query, Relation::Key],
        ..Default::default()
    };
    let labels: Vec<usize> = (0..a.h.rows()).map(|_| rng.random_range(0..a.h.cols())).collect();
    run_layer(attn_inputs(&a), |t, v| {
        let (y, rec) = a.layer.apply(t, &v[1..], &a.ctx, &a.pe, v[0])?;
        let task = cross_entropy(t, y, &labels, &vec![true; labels.len()])?;
        let (total, _) = distill_total_loss(t, task, &teacher, &rec.expect("capture on"), &cfg)?;
        Ok(total)
    })
}

fn mask(n: usize, rng: &mut impl Rng) -> Vec<bool> {
    let mut m: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
    m[rng.random_range(0..n)] = true;
    m
}

fn ce_case(seed: u64) -> gkedm::Result<f64> {
    let mut rng = rng(seed);
    let (n, c) = (rng.random_range(2..7), rng.random_range(2..5));
    let z = uniform(n, c, &mut rng).map(|x| 3.0 * x);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    let m = mask(n, &mut rng);
    run_layer(vec![z], |t, v| cross_entropy(t, v[0], &labels, &m))
}

fn bce_case(seed: u64) -> gkedm::Result<f64> {
    let mut rng = rng(seed);
    let (n, l) = (rng.random_range(2..7), rng.random_range(1..5));
    let z = uniform(n, l, &mut rng).map(|x| 3.0 * x);
    let y = uniform(n, l, &mut rng).map(|x| f64::from(u8::from(x > 0.0)));
    let m = mask(n, &mut rng);
    run_layer(vec![z], |t, v| bce_multilabel(t, v[0], &y, &m))
}

fn kd_case(seed: u64) -> gkedm::Result<f64> {
    let mut rng = rng(seed);
    let (n, c) = (rng.random_range(2..7), rng.random_range(2..5));
    let zt = uniform(n, c, &mut rng).map(|x| 3.0 * x);
    let zs = uniform(n, c, &mut rng).map(|x| 3.0 * x);
    let temp = rng.random_range(0.5..4.0);
    run_layer(vec![zs], |t, v| kd_soft_loss(t, &zt, v[0], temp))
}

fn fitnet_case(seed: u64) -> gkedm::Result<f64> {
    let mut rng = rng(seed);
    let (n, ds, dt) = (rng.random_range(2..7), rng.random_range(1..5), rng.random_range(1..5));
    let hs = uniform(n, ds, &mut rng);
    let ht = uniform(n, dt, &mut rng);
    let adapter = uniform(ds, dt, &mut rng);
    let m = mask(n, &mut rng);
    run_layer(vec![hs, adapter], |t, v| fitnet_loss(t, v[0], &ht, v[1], &m))
}

fn lsp_case(seed: u64, kernel: LspKernel) -> gkedm::Result<f64> {
    let mut rng = rng(seed);
    let c = case(&mut rng);
    let d = rng.random_range(1..5);
    let hs = uniform(c.n, d, &mut rng);
    let ht = uniform(c.n, d, &mut rng);
    run_layer(vec![hs], |t, v| lsp_loss(t, v[0], &ht, &c.g, kernel))
}

/// Runs every layer and loss gradient check over [`GRAD_SEEDS`] seeds and
/// returns `(name, worst relative error)` per item.
pub fn gradient_table() -> gkedm::Result<Vec<(&'static str, f64)>> {
    type Check = Box<dyn Fn(u64) -> gkedm::Result<f64>>;
    let checks: Vec<(&'static str, Check)> = vec![
        ("gcn", Box::new(gcn_case)),
        ("sage", Box::new(sage_case)),
        ("gkedm", Box::new(gkedm_case)),
        ("classifier_head", Box::new(head_case)),
        ("cross_entropy", Box::new(ce_case)),
        ("bce_multilabel", Box::new(bce_case)),
        ("kd_soft_loss", Box::new(kd_case)),
        ("fitnet_loss", Box::new(fitnet_case)),
        ("lsp_loss_rbf", Box::new(|s| lsp_case(s, LspKernel::Rbf { sigma: 0.8 }))),
        ("lsp_loss_poly", Box::new(|s| lsp_case(s, LspKernel::Poly { degree: 2 }))),
        ("lsp_loss_linear", Box::new(|s| lsp_case(s, LspKernel::Linear))),
        ("attention_map_kl", Box::new(|s| attention_loss_case(s, None))),
        ("relation_kl_value", Box::new(|s| attention_loss_case(s, Some(Relation::Value)))),
        ("relation_kl_query", Box::new(|s| attention_loss_case(s, Some(Relation::Query)))),
        ("relation_kl_key", Box::new(|s| attention_loss_case(s, Some(Relation::Key)))),
        ("distill_total_loss", Box::new(total_loss_case)),
    ];
    checks
        .into_iter()
        .map(|(name, f)| {
            let mut worst = 0.0_f64;
            for seed in 0..GRAD_SEEDS {
                worst = worst.max(f(seed)?);
            }
            Ok((name, worst))
        })
        .collect()
}

pub fn gradients() -> Outcome {
    let table = gradient_table().map_err(|e| e.to_string())?;
    let (name, worst) = table
        .iter()
        .cloned()
        .fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let failing: Vec<String> = table
        .iter()
        .filter(|(_, e)| *e > GRAD_TOL)
        .map(|(n, e)| format!("{n}={e:.2e}"))
        .collect();
    if failing.is_empty() {
        Ok(format!(
            "{} layers/losses x {GRAD_SEEDS} seeds, max rel error {worst:.2e} ({name})",
            table.len()
        ))
    } else {
        Err(format!("over tolerance: {}", failing.join(", ")))
    }
}

fn attention_params(layer: &GkedmAttentionLayer) -> AttentionParams {
    AttentionParams {
        pe_map: to_mat(&layer.pe_map),
        wq: to_mat(&layer.wq),
        bq: layer.bq.data().to_vec(),
        wk: to_mat(&layer.wk),
        bk: layer.bk.data().to_vec(),
        wv: to_mat(&layer.wv),
        bv: layer.bv.data().to_vec(),
    }
}

/// Worst deviation of the edge-packed layer from the dense oracle on `g`,
/// covering both the output and every head's attention map.
pub fn attention_vs_oracle(g: &CsrGraph, seed: u64) -> gkedm::Result<f64> {
    let mut rng = rng(seed);
    let n_heads = rng.random_range(1..4);
    let dh = rng.random_range(1..4);
    let m = rng.random_range(1..5);
    let d = n_heads * dh;
    let mut layer = GkedmAttentionLayer::new(d, n_heads, m, &mut rng)?;
    layer.bq = uniform_vec(d, &mut rng);
    layer.bk = uniform_vec(d, &mut rng);
    layer.bv = uniform_vec(d, &mut rng);
    let pe = laplacian_pe(g, m, SignRule::LargestPositive)?;
    let h = uniform(g.n_nodes(), d, &mut rng).map(|x| 2.0 * x);
    let ctx = GraphContext::new(g);
    let mut t = Tape::new();
    let x = t.constant(h.clone());
    let (y, rec) = layer.forward(&mut t, &ctx, &pe, x)?;
    let rec = rec.expect("capture on").to_record(&t);

    let want = attention_oracle(g, &to_mat(&h), &to_mat(&pe.values), &attention_params(&layer), n_heads);
    let mut worst = max_abs_diff(&to_mat(t.value(y)), &want.out);
    let (src, dst) = (rec.edges.src(), rec.edges.dst());
    for (head, dense) in rec.heads.iter().zip(&want.attn) {
        let mut scattered = vec![vec![0.0; g.n_nodes()]; g.n_nodes()];
        for e in 0..src.len() {
            scattered[src[e]][dst[e]] = head.attn.data()[e];
        }
        worst = worst.max(max_abs_diff(&scattered, dense));
    }
    Ok(worst)
}

pub fn oracle_equivalence() -> Outcome {
    let mut graphs = all_four_node_graphs();
    let exhaustive = graphs.len();
    let mut r = rng(0x0ac1e);
    for _ in 0..20 {
        let p = r.random_range(0.1..0.9);
        graphs.push(random_graph(8, p, &mut r));
    }
    let mut worst = 0.0_f64;
    for (k, g) in graphs.iter().enumerate() {
        worst = worst.max(attention_vs_oracle(g, k as u64).map_err(|e| e.to_string())?);
    }
    let line = format!(
        "{exhaustive} four-node graphs + 20 eight-node graphs, max |diff| {worst:.2e}"
    );
    if worst <= 1e-9 {
        Ok(line)
    } else {
        Err(line)
    }
}

pub fn random_symmetric(n: usize, rng: &mut impl Rng) -> Tensor {
    let mut m = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in i..n {
            let v = rng.random_range(-1.0..1.0);
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
    m
}

/// `(max residual ‖Mv − λv‖₂, reconstruction error ‖M − VΛVᵀ‖_F)`.
pub fn eigen_errors(m: &Tensor) -> gkedm::Result<(f64, f64)> {
    let e = symmetric_eigen(m)?;
    let n = m.rows();
    let mv = m.matmul(&e.vectors)?;
    let mut residual = 0.0_f64;
    for k in 0..n {
        let r: f64 = (0..n)
            .map(|i| (mv.get(i, k) - e.values[k] * e.vectors.get(i, k)).powi(2))
            .sum::<f64>()
            .sqrt();
        residual = residual.max(r);
    }
    let mut recon = 0.0;
    for i in 0..n {
        for j in 0..n {
            let r: f64 = (0..n).map(|k| e.vectors.get(i, k) * e.values[k] * e.vectors.get(j, k)).sum();
            recon += (m.get(i, j) - r).powi(2);
        }
    }
    Ok((residual, recon.sqrt()))
}

pub fn eigensolver() -> Outcome {
    let mut r = rng(0xe16e);
    let (mut res, mut rec) = (0.0_f64, 0.0_f64);
    for _ in 0..50 {
        let m = random_symmetric(20, &mut r);
        let (a, b) = eigen_errors(&m).map_err(|e| e.to_string())?;
        res = res.max(a);
        rec = rec.max(b);
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for k in 0..50 {
        let g = random_graph(20, 0.05 + 0.9 * k as f64 / 50.0, &mut r);
        let l = normalized_laplacian(&g).map_err(|e| e.to_string())?;
        let e = symmetric_eigen(&l).map_err(|e| e.to_string())?;
        lo = lo.min(e.values[0]);
        hi = hi.max(*e.values.last().unwrap());
    }
    let line = format!(
        "50 matrices: residual {res:.2e}, reconstruction {rec:.2e}; Laplacian spectrum in [{lo:.2e}, {hi:.12}]"
    );
    if res < 1e-8 && rec < 1e-8 && lo >= -1e-9 && hi <= 2.0 + 1e-9 {
        Ok(line)
    } else {
        Err(line)
    }
}

/// Runs GCN, SAGE and the attention layer (with its positional encoding
/// permuted alongside the nodes) on `g` and on `g` permuted by `perm`.
pub fn permutation_error(g: &CsrGraph, perm: &[usize], seed: u64) -> gkedm::Result<f64> {
    let mut rng = rng(seed);
    let n = g.n_nodes();
    let d = 6;
    let h = uniform(n, d, &mut rng);
    let gp = g.permute(perm)?;
    let hp = from_mat(&permute_rows(&to_mat(&h), perm));
    let (ctx, ctxp) = (GraphContext::new(g), GraphContext::new(&gp));

    let gcn = GcnConv::new(d, d, Activation::Relu, &mut rng);
    let sage = SageConv::new(d, d, Activation::Relu, &mut rng);
    let attn = GkedmAttentionLayer::new(d, 2, 4, &mut rng)?;
    let pe = laplacian_pe(g, 4, SignRule::LargestPositive)?;
    let pep = pe.permute(perm)?;

    let mut worst = 0.0_f64;
    let mut t = Tape::new();
    let (a, b) = (t.constant(h), t.constant(hp));
    let pairs = [
        (gcn.forward(&mut t, &ctx, a)?, gcn.forward(&mut t, &ctxp, b)?),
        (sage.forward(&mut t, &ctx, a)?, sage.forward(&mut t, &ctxp, b)?),
        (
            attn.forward(&mut t, &ctx, &pe, a)?.0,
            attn.forward(&mut t, &ctxp, &pep, b)?.0,
        ),
    ];
    for (y, yp) in pairs {
        let moved = permute_rows(&to_mat(t.value(y)), perm);
        worst = worst.max(max_abs_diff(&moved, &to_mat(t.value(yp))));
    }
    Ok(worst)
}

pub fn permutation_equivariance() -> Outcome {
    let mut r = rng(0x9e7);
    let mut worst = 0.0_f64;
    for k in 0..10 {
        let g = random_graph(20, 0.2, &mut r);
        let perm = random_permutation(20, &mut r);
        worst = worst.max(permutation_error(&g, &perm, k).map_err(|e| e.to_string())?);
    }
    let line = format!("10 permutations of 20-node graphs, gcn/sage/gkedm max |diff| {worst:.2e}");
    if worst <= 1e-9 {
        Ok(line)
    } else {
        Err(line)
    }
}

/// Brute-force LSP on a 5-node graph with the RBF kernel, compared through
/// the configured default weight.
pub fn lsp_parity() -> Outcome {
    let cfg = DistillConfig::default();
    if cfg.lsp_weight != 100.0 {
        return Err(format!("default LSP weight is {}, expected 100", cfg.lsp_weight));
    }
    let g = CsrGraph::from_edges(5, &[(0, 1), (0, 2), (1, 2), (2, 3), (3, 4), (1, 4)], true).unwrap();
    let mut r = rng(5);
    let mut worst = 0.0_f64;
    for _ in 0..10 {
        let hs = uniform(5, 3, &mut r);
        let ht = uniform(5, 3, &mut r);
        let mut t = Tape::new();
        let x = t.constant(hs.clone());
        let l = lsp_loss(&mut t, x, &ht, &g, cfg.kernel()).map_err(|e| e.to_string())?;
        let weighted = t.scale(l, cfg.lsp_weight);
        let want = cfg.lsp_weight * lsp_oracle(&g, &to_mat(&hs), &to_mat(&ht), rbf(cfg.lsp_sigma));
        worst = worst.max((t.value(weighted).item() - want).abs());
    }
    let line = format!("weighted RBF LSP vs brute force on 5 nodes, max |diff| {worst:.2e}");
    if worst <= 1e-9 {
        Ok(line)
    } else {
        Err(line)
    }
}

/// Non-negativity of every KL-based loss over random instances; returns the
/// smallest value seen.
pub fn min_kl_value(instances: u64) -> gkedm::Result<f64> {
    let mut lowest = f64::INFINITY;
    for seed in 0..instances {
        let mut rng = rng(seed);
        let a = attn_case(&mut rng)?;
        let t1 = teacher_record(&a, &mut rng)?;
        let t2 = teacher_record(&a, &mut rng)?;
        lowest = lowest.min(attention_map_kl_value(&t1, &t2)?);
        for r in [Relation::Value, Relation::Query, Relation::Key] {
            lowest = lowest.min(relation_kl_value(&t1, &t2, r)?);
        }
        let (n, c) = (rng.random_range(2..7), rng.random_range(2..5));
        let zt = uniform(n, c, &mut rng);
        let mut t = Tape::new();
        let zs = t.constant(uniform(n, c, &mut rng));
        let kd = kd_soft_loss(&mut t, &zt, zs, rng.random_range(0.5..4.0))?;
        lowest = lowest.min(t.value(kd).item());
        let hs = t.constant(uniform(a.g.n_nodes(), 3, &mut rng));
        let ht = uniform(a.g.n_nodes(), 3, &mut rng);
        for k in [LspKernel::Rbf { sigma: 1.0 }, LspKernel::Poly { degree: 2 }, LspKernel::Linear] {
            let l = lsp_loss(&mut t, hs, &ht, &a.g, k)?;
            lowest = lowest.min(t.value(l).item());
        }
    }
    Ok(lowest)
}

pub fn small_sbm(seed: u64) -> gkedm::graph::NodeDataset {
    gkedm::graph::sbm_generate(&gkedm::graph::SbmConfig {
        blocks: 3,
        nodes_per_block: 20,
        p_in: 0.3,
        p_out: 0.05,
        feature_dim: 6,
        noise_sigma: 1.0,
        seed,
    })
    .unwrap()
}

/// A small trained teacher: two-layer GCN enhanced to one convolution plus a
/// two-head attention layer.
pub fn small_teacher(ds: &gkedm::graph::NodeDataset) -> gkedm::layers::GnnModel {
    use gkedm::pipeline::{enhance_with_gkedm, pretrain_gcn, TrainConfig};
    let cfg = TrainConfig { epochs: 60, ..Default::default() };
    let (pre, _) = pretrain_gcn(ds, &"gcn:16,16".parse().unwrap(), &cfg).unwrap();
    enhance_with_gkedm(&pre, ds, 4, 2, &cfg).unwrap().0
}

pub fn distillation_invariants() -> Outcome {
    use gkedm::distill::DistillMode;
    use gkedm::pipeline::{distill_from, distill_student, StudentSpec, TrainConfig};

    let run = || -> gkedm::Result<String> {
        let ds = small_sbm(1);
        let teacher = small_teacher(&ds);
        let before = teacher.checksum();
        let spec = StudentSpec::like_teacher("gcn:8".parse()?, &teacher)?;
        let cfg = TrainConfig { epochs: 15, ..Default::default() };
        let mut lowest_component = f64::INFINITY;
        let mut worst_rows = 0.0_f64;
        for mode in [DistillMode::None, DistillMode::Kd, DistillMode::Fitnet, DistillMode::Lsp, DistillMode::Attention] {
            let dcfg = DistillConfig {
                mode,
                relations: vec![Relation::Value, Relation::Query, Relation::Key],
                ..Default::default()
            };
            let (student, report) = distill_student(&teacher, &spec, &ds, &dcfg, &cfg)?;
            if teacher.checksum() != before {
                return Err(gkedm::Error::Contract(format!("teacher changed during {mode} distillation")));
            }
            for row in &report.rows {
                for (name, v) in report.component_names.iter().zip(&row.components) {
                    if name != "L_CE" && name != "L_FIT" {
                        lowest_component = lowest_component.min(*v);
                    }
                }
            }
            let mut s = student.clone();
            if let Some(e) = &mut s.enhancement {
                e.layer.capture = true;
            }
            let (_, _, rec) = s.infer(&GraphContext::new(ds.graph()), ds.features())?;
            worst_rows = worst_rows.max(rec.expect("student has attention").normalization_error().0);
        }
        let mut t = teacher.clone();
        t.enhancement.as_mut().unwrap().layer.capture = true;
        let (_, _, rec) = t.infer(&GraphContext::new(ds.graph()), ds.features())?;
        let (err, min_w) = rec.expect("teacher has attention").normalization_error();
        worst_rows = worst_rows.max(err);
        if min_w < 0.0 {
            return Err(gkedm::Error::Contract(format!("negative attention weight {min_w}")));
        }

        let dcfg = DistillConfig {
            relations: vec![Relation::Value, Relation::Query, Relation::Key],
            ..Default::default()
        };
        let once = TrainConfig { epochs: 1, ..Default::default() };
        let (_, report) = distill_from(teacher.clone(), &teacher, &ds, &dcfg, &once)?;
        let at_init: f64 = report.rows[0].components[1..].iter().fold(0.0, |m, v| m.max(v.abs()));

        let lowest = min_kl_value(30)?.min(lowest_component);
        let line = format!(
            "teacher checksum stable over 5 modes; attention terms at teacher init {at_init:.1e}; \
             min KL {lowest:.2e}; row-sum error {worst_rows:.1e}"
        );
        if at_init <= 1e-12 && lowest >= 0.0 && worst_rows <= 1e-9 {
            Ok(line)
        } else {
            Err(gkedm::Error::Contract(line))
        }
    };
    run().map_err(|e| e.to_string())
}
