//! Attention-map and relation distillation between two GKEDM layers that
//! share a graph and a head count.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::losses::neg_entropy;
use crate::error::{Error, Result};
use crate::graph::EdgeIndex;
use crate::layers::{AttentionRecord, AttentionVars, HeadVars};
use crate::tensor::{Tape, Tensor, Var};

/// Which projection a relation loss is built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Value,
    Query,
    Key,
}

impl Relation {
    /// Column name used in per-epoch reports.
    pub fn column(self) -> &'static str {
        match self {
            Relation::Value => "L_VR",
            Relation::Query => "L_QR",
            Relation::Key => "L_KR",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Value => "value",
            Relation::Query => "query",
            Relation::Key => "key",
        })
    }
}

impl FromStr for Relation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "value" | "v" => Ok(Relation::Value),
            "query" | "q" => Ok(Relation::Query),
            "key" | "k" => Ok(Relation::Key),
            other => Err(Error::Config(format!("unknown relation {other:?}"))),
        }
    }
}

fn check_compatible(teacher: &AttentionRecord, edges: &EdgeIndex, n_heads: usize) -> Result<()> {
    if teacher.n_heads() != n_heads {
        return Err(Error::Config(format!(
            "teacher has {} attention heads, student has {n_heads}",
            teacher.n_heads()
        )));
    }
    if &teacher.edges != edges {
        return Err(Error::Contract(
            "teacher and student attention records use different edge orders".into(),
        ));
    }
    Ok(())
}

/// `Σ_e p[e] (ln p[e] − ln q[e])` for a constant `p` and a tape
/// distribution `q`, both edge-packed.
fn kl_const_to_var(tape: &mut Tape, p: &Tensor, q: Var) -> Result<Var> {
    let log_q = tape.log(q);
    let neg_p = tape.constant(p.map(|x| -x));
    let cross = tape.mul(log_q, neg_p)?;
    let cross = tape.sum(cross);
    let konst = tape.constant(Tensor::scalar(neg_entropy(p)));
    let kl = tape.add(cross, konst)?;
    // The two sums cancel when p ≈ q and can leave a residue of about -1e-17.
    Ok(tape.relu(kl))
}

/// Puts a captured record on the tape as constants.
pub fn record_vars(tape: &mut Tape, rec: &AttentionRecord) -> AttentionVars {
    let heads = rec
        .heads
        .iter()
        .map(|h| HeadVars {
            attn: tape.constant(h.attn.clone()),
            q: tape.constant(h.q.clone()),
            k: tape.constant(h.k.clone()),
            v: tape.constant(h.v.clone()),
        })
        .collect();
    AttentionVars {
        edges: rec.edges.clone(),
        heads,
    }
}

/// Mean over nodes and heads of `KL(A_T[i,·] ‖ A_S[i,·])`.
pub fn attention_map_kl(tape: &mut Tape, teacher: &AttentionRecord, student: &AttentionVars) -> Result<Var> {
    check_compatible(teacher, &student.edges, student.heads.len())?;
    let denom = (teacher.edges.n_nodes() * teacher.n_heads()) as f64;
    let mut total: Option<Var> = None;
    for (ht, hs) in teacher.heads.iter().zip(&student.heads) {
        let kl = kl_const_to_var(tape, &ht.attn, hs.attn)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, kl)?,
            None => kl,
        });
    }
    let total = total.ok_or_else(|| Error::Config("attention record has no heads".into()))?;
    Ok(tape.scale(total, 1.0 / denom))
}

/// Edge-restricted relation distributions: per node `i`, the softmax over
/// `j ∈ N(i)` of `⟨X[i], X[j]⟩ / √d_head`.
fn relation_dist(tape: &mut Tape, x: Var, edges: &EdgeIndex) -> Result<Var> {
    let d = tape.value(x).cols();
    let s = tape.edge_dot(x, x, edges)?;
    let s = tape.scale(s, 1.0 / (d as f64).sqrt());
    tape.segment_softmax(s, edges.row_ptr().clone())
}

fn pick(h: &HeadVars, which: Relation) -> Var {
    match which {
        Relation::Value => h.v,
        Relation::Query => h.q,
        Relation::Key => h.k,
    }
}

/// Mean over nodes and heads of `KL(R_T[i,·] ‖ R_S[i,·])` where `R` are the
/// relation distributions of the chosen projection.
pub fn relation_kl(
    tape: &mut Tape,
    teacher: &AttentionRecord,
    student: &AttentionVars,
    which: Relation,
) -> Result<Var> {
    check_compatible(teacher, &student.edges, student.heads.len())?;
    let edges = &teacher.edges;
    let denom = (edges.n_nodes() * teacher.n_heads()) as f64;
    let mut scratch = Tape::new();
    let mut total: Option<Var> = None;
    for (ht, hs) in teacher.heads.iter().zip(&student.heads) {
        let xt = match which {
            Relation::Value => &ht.v,
            Relation::Query => &ht.q,
            Relation::Key => &ht.k,
        };
        let xt = scratch.constant(xt.clone());
        let rt = relation_dist(&mut scratch, xt, edges)?;
        let rs = relation_dist(tape, pick(hs, which), edges)?;
        let kl = kl_const_to_var(tape, scratch.value(rt), rs)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, kl)?,
            None => kl,
        });
    }
    let total = total.ok_or_else(|| Error::Config("attention record has no heads".into()))?;
    Ok(tape.scale(total, 1.0 / denom))
}

/// Value form of [`attention_map_kl`] for two captured records.
pub fn attention_map_kl_value(teacher: &AttentionRecord, student: &AttentionRecord) -> Result<f64> {
    let mut tape = Tape::new();
    let s = record_vars(&mut tape, student);
    let l = attention_map_kl(&mut tape, teacher, &s)?;
    Ok(tape.value(l).item())
}

/// Value form of [`relation_kl`] for two captured records.
pub fn relation_kl_value(teacher: &AttentionRecord, student: &AttentionRecord, which: Relation) -> Result<f64> {
    let mut tape = Tape::new();
    let s = record_vars(&mut tape, student);
    let l = relation_kl(&mut tape, teacher, &s, which)?;
    Ok(tape.value(l).item())
}
