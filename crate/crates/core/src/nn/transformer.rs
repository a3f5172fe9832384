//! Bias-free pre-norm transformer with QK-Norm.
//!
//! Layer `i` under prefix `p` reads `p.layer{i}.{ln0, wq, wk, wv, wo, ln1, ffn0, ffn1}` and,
//! with QK-Norm, `p.layer{i}.qk_scale` of dims `[heads]`. Matrices are `[out, in]`.

use rayon::prelude::*;

use super::ops::{gelu_in_place, layer_norm, linear, pv_block, qk_block, softmax_in_place, TokenMatrix, KB, QB};
use crate::error::{Error, Result};
use crate::io::{Tensor, TensorStore, TransformerConfig};

/// Borrowed, shape-checked weights of one layer.
pub struct LayerWeights<'a> {
    pub ln0: &'a [f32],
    pub wq: &'a Tensor,
    pub wk: &'a Tensor,
    pub wv: &'a Tensor,
    pub wo: &'a Tensor,
    pub ln1: &'a [f32],
    pub ffn0: &'a Tensor,
    pub ffn1: &'a Tensor,
    pub qk_scale: Option<&'a [f32]>,
}

pub fn layer_name(prefix: &str, layer: usize, tensor: &str) -> String {
    format!("{prefix}.layer{layer}.{tensor}")
}

impl<'a> LayerWeights<'a> {
    pub fn load(store: &'a TensorStore, prefix: &str, layer: usize, cfg: &TransformerConfig) -> Result<Self> {
        let c = cfg.hidden;
        let f = cfg.ffn_dim();
        let get = |name: &str, dims: &[usize]| store.expect(&layer_name(prefix, layer, name), dims);
        Ok(LayerWeights {
            ln0: &get("ln0", &[c])?.data,
            wq: get("wq", &[c, c])?,
            wk: get("wk", &[c, c])?,
            wv: get("wv", &[c, c])?,
            wo: get("wo", &[c, c])?,
            ln1: &get("ln1", &[c])?.data,
            ffn0: get("ffn0", &[f, c])?,
            ffn1: get("ffn1", &[c, f])?,
            qk_scale: if cfg.qk_norm {
                Some(&get("qk_scale", &[cfg.heads])?.data)
            } else {
                None
            },
        })
    }
}

/// Per-head queries (already scaled), transposed keys and values, zero-padded for the
/// blocked kernels.
struct HeadInputs {
    t: usize,
    dh: usize,
    /// Query rows padded to a multiple of `QB`.
    tq: usize,
    /// Key count padded to a multiple of `KB`.
    tp: usize,
    /// Value width padded to a multiple of `KB`.
    dhp: usize,
    /// `[tq, dh]` per head.
    q: Vec<Vec<f32>>,
    /// `[dh, tp]` per head.
    kt: Vec<Vec<f32>>,
    /// `[tp, dhp]` per head.
    v: Vec<Vec<f32>>,
}

fn head_inputs(xn: &TokenMatrix, w: &LayerWeights, cfg: &TransformerConfig) -> Result<HeadInputs> {
    let t = xn.rows;
    let dh = cfg.head_dim();
    let tq = t.div_ceil(QB) * QB;
    let tp = t.div_ceil(KB) * KB;
    let dhp = dh.div_ceil(KB) * KB;
    let q = linear(xn, w.wq)?;
    let k = linear(xn, w.wk)?;
    let v = linear(xn, w.wv)?;
    let inv_sqrt = 1.0 / (dh as f32).sqrt();
    let mut out = HeadInputs {
        t,
        dh,
        tq,
        tp,
        dhp,
        q: Vec::with_capacity(cfg.heads),
        kt: Vec::with_capacity(cfg.heads),
        v: Vec::with_capacity(cfg.heads),
    };
    for h in 0..cfg.heads {
        let cols = h * dh..(h + 1) * dh;
        let mut qh = vec![0.0f32; tq * dh];
        let mut kt = vec![0.0f32; dh * tp];
        let mut vh = vec![0.0f32; tp * dhp];
        for i in 0..t {
            let qs = &q.row(i)[cols.clone()];
            let ks = &k.row(i)[cols.clone()];
            let (qf, kf) = match w.qk_scale {
                Some(s) => (s[h] * inv_sqrt / l2(qs), 1.0 / l2(ks)),
                None => (inv_sqrt, 1.0),
            };
            for d in 0..dh {
                qh[i * dh + d] = qs[d] * qf;
                kt[d * tp + i] = ks[d] * kf;
            }
            vh[i * dhp..i * dhp + dh].copy_from_slice(&v.row(i)[cols.clone()]);
        }
        out.q.push(qh);
        out.kt.push(kt);
        out.v.push(vh);
    }
    Ok(out)
}

fn l2(v: &[f32]) -> f32 {
    v.iter().map(|a| a * a).sum::<f32>().sqrt().max(1e-12)
}

/// Logits of query block `b` for head `h` into `scores` (`QB x tp`).
fn logits_block(hi: &HeadInputs, h: usize, b: usize, scores: &mut [f32]) {
    let q = &hi.q[h][b * QB * hi.dh..(b + 1) * QB * hi.dh];
    qk_block(q, &hi.kt[h], hi.dh, hi.tp, scores);
}

/// Multi-head self-attention over pre-normalized tokens, before the output projection.
fn attention(xn: &TokenMatrix, w: &LayerWeights, cfg: &TransformerConfig) -> Result<TokenMatrix> {
    let c = cfg.hidden;
    let hi = head_inputs(xn, w, cfg)?;
    let (t, tp, dh, dhp) = (hi.t, hi.tp, hi.dh, hi.dhp);
    let mut out = TokenMatrix::zeros(t, c);
    out.data
        .par_chunks_mut(QB * c)
        .enumerate()
        .for_each_init(
            || (vec![0.0f32; QB * tp], vec![0.0f32; QB * dhp]),
            |(scores, pv), (b, rows)| {
                for h in 0..cfg.heads {
                    logits_block(&hi, h, b, scores);
                    for r in scores.chunks_exact_mut(tp) {
                        softmax_in_place(&mut r[..t]);
                    }
                    pv_block(scores, tp, t, &hi.v[h], dhp, pv);
                    for (qi, row) in rows.chunks_exact_mut(c).enumerate() {
                        row[h * dh..(h + 1) * dh].copy_from_slice(&pv[qi * dhp..qi * dhp + dh]);
                    }
                }
            },
        );
    Ok(out)
}

/// Pre-norm residual block: `x + Attn(LN(x))`, then `x + FFN(LN(x))`.
pub fn transformer_layer(
    x: &TokenMatrix,
    store: &TensorStore,
    prefix: &str,
    layer: usize,
    cfg: &TransformerConfig,
) -> Result<TokenMatrix> {
    if x.cols != cfg.hidden {
        return Err(Error::Shape(format!(
            "{prefix} layer {layer}: token width {} != hidden {}",
            x.cols, cfg.hidden
        )));
    }
    let w = LayerWeights::load(store, prefix, layer, cfg)?;
    let mut x = x.clone();
    let a = attention(&layer_norm(&x, w.ln0), &w, cfg)?;
    x.add_assign(&linear(&a, w.wo)?);
    let mut hdn = linear(&layer_norm(&x, w.ln1), w.ffn0)?;
    gelu_in_place(&mut hdn.data);
    x.add_assign(&linear(&hdn, w.ffn1)?);
    Ok(x)
}

/// Applies `cfg.layers` layers in sequence.
pub fn transformer_forward(x: &TokenMatrix, store: &TensorStore, prefix: &str, cfg: &TransformerConfig) -> Result<TokenMatrix> {
    let mut x = x.clone();
    for l in 0..cfg.layers {
        x = transformer_layer(&x, store, prefix, l, cfg)?;
    }
    Ok(x)
}

/// Pre-softmax attention logits of layer `layer` for input `x`, one `T x T` matrix per head.
pub fn attention_logits(
    x: &TokenMatrix,
    store: &TensorStore,
    prefix: &str,
    layer: usize,
    cfg: &TransformerConfig,
) -> Result<Vec<TokenMatrix>> {
    let w = LayerWeights::load(store, prefix, layer, cfg)?;
    let hi = head_inputs(&layer_norm(x, w.ln0), &w, cfg)?;
    let t = x.rows;
    let mut scores = vec![0.0f32; QB * hi.tp];
    Ok((0..cfg.heads)
        .map(|h| {
            let mut m = TokenMatrix::zeros(t, t);
            for b in 0..hi.tq / QB {
                logits_block(&hi, h, b, &mut scores);
                for qi in 0..QB.min(t - b * QB) {
                    m.row_mut(b * QB + qi).copy_from_slice(&scores[qi * hi.tp..qi * hi.tp + t]);
                }
            }
            m
        })
        .collect())
}

/// Row-stochastic attention matrices of layer `layer`, one per head.
pub fn attention_probs(
    x: &TokenMatrix,
    store: &TensorStore,
    prefix: &str,
    layer: usize,
    cfg: &TransformerConfig,
) -> Result<Vec<TokenMatrix>> {
    let mut heads = attention_logits(x, store, prefix, layer, cfg)?;
    for m in &mut heads {
        for i in 0..m.rows {
            softmax_in_place(m.row_mut(i));
        }
    }
    Ok(heads)
}
