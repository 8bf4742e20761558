use super::mask::SequenceMask;
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Projection weights of one attention block, each `[d, d]`, no biases.
#[derive(Clone, Copy, Debug)]
pub struct MhsaWeights {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
}

/// Multi-head scaled dot-product self-attention over `[batch, seq, d]`.
///
/// Logits are `q k^T / sqrt(d / heads)`; padded keys get `-1e9` before the
/// softmax so valid queries never attend to padding.
pub fn mhsa<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    heads: usize,
    w: MhsaWeights,
    mask: &SequenceMask,
) -> Result<Var> {
    let d = *g.shape(x).last().unwrap_or(&0);
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::Config(format!("model width {d} is not divisible by {heads} heads")));
    }
    let head_dim = d / heads;
    let q = g.linear(x, w.wq, None)?;
    let k = g.linear(x, w.wk, None)?;
    let v = g.linear(x, w.wv, None)?;
    let q = g.split_heads(q, heads)?;
    let k = g.split_heads(k, heads)?;
    let v = g.split_heads(v, heads)?;
    let logits = g.batched_matmul(q, k, true)?;
    let logits = g.scale(logits, T::one() / T::from_usize(head_dim).unwrap().sqrt());
    let logits = g.mask_keys(logits, mask)?;
    let attn = g.softmax(logits)?;
    let ctx = g.batched_matmul(attn, v, false)?;
    let merged = g.merge_heads(ctx)?;
    g.linear(merged, w.wo, None)
}
