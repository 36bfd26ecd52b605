//! Single-head gated cross-attention.
//!
//! `out_i = q_i + tanh(gate) * Wo * sum_j softmax_j(<Wq q_i, Wk kv_j> / sqrt(d)) Wv kv_j`
//!
//! The gate is a per-channel vector initialized to zero, so a fresh block
//! returns its queries unchanged.

use super::layout::{Init, ParamLayout};
use super::tape::{Tape, Var};
use crate::error::{LgsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GatedCrossAttention {
    pub d: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub gate: usize,
}

impl GatedCrossAttention {
    pub fn new(layout: &mut ParamLayout, name: &str, d: usize) -> Self {
        let mut mat = |n: &str| layout.alloc(&format!("{name}.{n}"), d * d, Init::FanIn(d));
        let (wq, wk, wv, wo) = (mat("wq"), mat("wk"), mat("wv"), mat("wo"));
        let gate = layout.alloc(&format!("{name}.gate"), d, Init::Zeros);
        Self {
            d,
            wq,
            wk,
            wv,
            wo,
            gate,
        }
    }

    fn check(&self, tape: &Tape, queries: &[Var], kv: &[Var]) -> Result<()> {
        if queries.is_empty() || kv.is_empty() {
            return Err(LgsError::Shape("cross-attention needs non-empty token lists".into()));
        }
        if let Some(bad) = queries.iter().chain(kv).find(|v| tape.len_of(**v) != self.d) {
            return Err(LgsError::Shape(format!(
                "token of length {} where attention width is {}",
                tape.len_of(*bad),
                self.d
            )));
        }
        Ok(())
    }

    pub fn forward_tape(&self, tape: &mut Tape, queries: &[Var], kv: &[Var]) -> Result<Vec<Var>> {
        self.check(tape, queries, kv)?;
        let d = self.d;
        let keys: Vec<Var> = kv.iter().map(|&t| tape.linear(t, self.wk, None, d, d)).collect();
        let vals: Vec<Var> = kv.iter().map(|&t| tape.linear(t, self.wv, None, d, d)).collect();
        let gate = tape.param(self.gate, d);
        let gate = tape.tanh(gate);
        let inv = 1.0 / (d as f64).sqrt();
        let mut out = Vec::with_capacity(queries.len());
        for &q in queries {
            let qp = tape.linear(q, self.wq, None, d, d);
            let scores: Vec<Var> = keys.iter().map(|&k| tape.dot(qp, k)).collect();
            let scores = tape.concat(&scores);
            let scores = tape.scale(scores, inv);
            let attn = tape.softmax(scores);
            let mixed = tape.weighted_sum(attn, &vals);
            let proj = tape.linear(mixed, self.wo, None, d, d);
            let gated = tape.mul(gate, proj);
            out.push(tape.add(q, gated));
        }
        Ok(out)
    }

    /// Attention weights of every query over the key/value tokens.
    pub fn weights(&self, params: &[f64], queries: &[Vec<f64>], kv: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new(params);
        let q: Vec<Var> = queries.iter().map(|v| tape.constant(v.clone())).collect();
        let k: Vec<Var> = kv.iter().map(|v| tape.constant(v.clone())).collect();
        self.check(&tape, &q, &k)?;
        let d = self.d;
        let keys: Vec<Var> = k.iter().map(|&t| tape.linear(t, self.wk, None, d, d)).collect();
        let inv = 1.0 / (d as f64).sqrt();
        Ok(q.iter()
            .map(|&qi| {
                let qp = tape.linear(qi, self.wq, None, d, d);
                let s: Vec<Var> = keys.iter().map(|&kj| tape.dot(qp, kj)).collect();
                let s = tape.concat(&s);
                let s = tape.scale(s, inv);
                let a = tape.softmax(s);
                tape.value(a).to_vec()
            })
            .collect())
    }
}

pub fn gated_cross_attention(
    params: &[f64],
    block: &GatedCrossAttention,
    queries: &[Vec<f64>],
    kv: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let mut tape = Tape::new(params);
    let q: Vec<Var> = queries.iter().map(|v| tape.constant(v.clone())).collect();
    let k: Vec<Var> = kv.iter().map(|v| tape.constant(v.clone())).collect();
    let out = block.forward_tape(&mut tape, &q, &k)?;
    Ok(out.iter().map(|v| tape.value(*v).to_vec()).collect())
}
