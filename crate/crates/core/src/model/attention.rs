//! Multi-head scaled dot-product attention, with optional memory slots on
//! the key/value side.

use super::params::{AttentionParams, MemorySlots};
use crate::error::{Error, Result};
use crate::tensor::{DiffTensor, MASK_VALUE};

#[derive(Debug, Clone)]
pub struct AttentionOutput {
    /// `[n_q × d]`.
    pub output: DiffTensor,
    /// One `[n_q × n_k]` weight matrix per head.
    pub weights: Vec<DiffTensor>,
}

/// Additive logit bias: `MASK_VALUE` where a key is padding or lies in the
/// future of a causal query, zero elsewhere. `None` when nothing is masked.
fn logit_bias(n_q: usize, n_k: usize, key_mask: Option<&[bool]>, causal: bool, n_extra: usize) -> Option<Vec<f64>> {
    let any_pad = key_mask.is_some_and(|m| m.iter().any(|v| !v));
    if !any_pad && !causal {
        return None;
    }
    let total = n_k + n_extra;
    let mut bias = vec![0.0; n_q * total];
    for i in 0..n_q {
        for j in 0..n_k {
            let padded = key_mask.is_some_and(|m| !m[j]);
            if padded || (causal && j > i) {
                bias[i * total + j] = MASK_VALUE;
            }
        }
    }
    Some(bias)
}

fn check_mask(key_mask: Option<&[bool]>, n: usize) -> Result<()> {
    match key_mask {
        Some(m) if m.len() != n => Err(Error::Tensor(crate::tensor::TensorError::Shape {
            op: "attention mask",
            lhs: vec![n],
            rhs: vec![m.len()],
        })),
        _ => Ok(()),
    }
}

fn heads(
    q: &DiffTensor,
    k: &DiffTensor,
    v: &DiffTensor,
    p: &AttentionParams,
    n_heads: usize,
    bias: Option<&[f64]>,
) -> Result<AttentionOutput> {
    let d = q.shape()[1];
    let dk = d / n_heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut outs = Vec::with_capacity(n_heads);
    let mut weights = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = q.slice_cols(h * dk, dk)?;
        let kh_t = k.slice_cols(h * dk, dk)?.transpose()?;
        let vh = v.slice_cols(h * dk, dk)?;
        let mut scores = qh.matmul(&kh_t)?.scale(scale);
        if let Some(b) = bias {
            scores = scores.add_const(b)?;
        }
        let a = scores.softmax(1)?;
        outs.push(a.matmul(&vh)?);
        weights.push(a);
    }
    let merged = DiffTensor::concat_cols(&outs)?;
    Ok(AttentionOutput {
        output: p.wo.forward(&merged)?,
        weights,
    })
}

/// General attention of `q_in` rows over `kv_in` rows.
pub fn attention(
    q_in: &DiffTensor,
    kv_in: &DiffTensor,
    p: &AttentionParams,
    n_heads: usize,
    key_mask: Option<&[bool]>,
    causal: bool,
) -> Result<AttentionOutput> {
    let (n_q, n_k) = (q_in.shape()[0], kv_in.shape()[0]);
    check_mask(key_mask, n_k)?;
    let q = p.wq.forward(q_in)?;
    let k = p.wk.forward(kv_in)?;
    let v = p.wv.forward(kv_in)?;
    let bias = logit_bias(n_q, n_k, key_mask, causal, 0);
    heads(&q, &k, &v, p, n_heads, bias.as_deref())
}

/// Self-attention over `x` (`[n × d]`) whose keys and values are extended
/// with `memory` rows. Memory slots are never masked; `key_mask[i] = false`
/// marks frame `i` as padding.
pub fn memory_augmented_attention(
    x: &DiffTensor,
    p: &AttentionParams,
    memory: Option<&MemorySlots>,
    key_mask: Option<&[bool]>,
    n_heads: usize,
) -> Result<AttentionOutput> {
    let n = x.shape()[0];
    check_mask(key_mask, n)?;
    let q = p.wq.forward(x)?;
    let mut k = p.wk.forward(x)?;
    let mut v = p.wv.forward(x)?;
    let mut n_mem = 0;
    if let Some(m) = memory {
        n_mem = m.keys.shape()[0];
        k = DiffTensor::concat_rows(&[k, m.keys.clone()])?;
        v = DiffTensor::concat_rows(&[v, m.values.clone()])?;
    }
    let bias = logit_bias(n, n, key_mask, false, n_mem);
    heads(&q, &k, &v, p, n_heads, bias.as_deref())
}

/// Plain multi-head self-attention, written without any memory handling.
/// Serves as the reference that memory-free models must reproduce.
pub fn standard_attention(
    x: &DiffTensor,
    p: &AttentionParams,
    key_mask: Option<&[bool]>,
    n_heads: usize,
) -> Result<AttentionOutput> {
    let n = x.shape()[0];
    check_mask(key_mask, n)?;
    let dk = x.shape()[1] / n_heads;
    let q = x.matmul(&p.wq.w)?.add_row(&p.wq.b)?;
    let k = x.matmul(&p.wk.w)?.add_row(&p.wk.b)?;
    let v = x.matmul(&p.wv.w)?.add_row(&p.wv.b)?;
    let bias: Option<Vec<f64>> = key_mask
        .filter(|m| m.contains(&false))
        .map(|m| (0..n * n).map(|ij| if m[ij % n] { 0.0 } else { MASK_VALUE }).collect());
    let mut per_head = Vec::with_capacity(n_heads);
    let mut weights = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let cols = h * dk;
        let logits = q
            .slice_cols(cols, dk)?
            .matmul(&k.slice_cols(cols, dk)?.transpose()?)?
            .scale(1.0 / (dk as f64).sqrt());
        let logits = match &bias {
            Some(b) => logits.add_const(b)?,
            None => logits,
        };
        let a = logits.softmax(1)?;
        per_head.push(a.matmul(&v.slice_cols(cols, dk)?)?);
        weights.push(a);
    }
    let output = DiffTensor::concat_cols(&per_head)?.matmul(&p.wo.w)?.add_row(&p.wo.b)?;
    Ok(AttentionOutput { output, weights })
}
