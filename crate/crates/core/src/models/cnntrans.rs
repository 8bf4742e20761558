use rand::Rng;

use super::{insert_head, insert_input_norm, Binder, ForwardPass, ModelConfig, BN_EPS, LN_EPS};
use crate::autograd::{Graph, Var};
use crate::data::rng::stream;
use crate::error::Result;
use crate::nn::{
    batch_norm_1d, depthwise_conv1d, dropout, eca, ffn, glorot_uniform as glorot, layer_norm, masked_pool, mhsa,
    Activation, MhsaWeights, Mode, ParamStore, PoolKind, SequenceMask,
};
use crate::tensor::{Scalar, Tensor};

pub(super) fn init<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<(ParamStore<T>, Vec<String>)> {
    let mut rng = stream(seed, "init");
    let (f, d, e, k) = (cfg.features, cfg.d_model, cfg.expanded(), cfg.conv_kernel);
    let fh = cfg.ffn_width();
    let mut p = ParamStore::new();
    let mut layers = vec!["input_projection".to_string(), "masking".to_string()];
    insert_input_norm(&mut p, f)?;
    p.insert("proj.w", glorot(&mut rng, &[f, d], f, d), true)?;
    p.insert("proj.b", Tensor::zeros(&[d]), true)?;
    for i in 0..cfg.conv_blocks {
        let n = |s: &str| format!("conv{i}.{s}");
        p.insert(&n("expand.w"), glorot(&mut rng, &[d, e], d, e), true)?;
        p.insert(&n("expand.b"), Tensor::zeros(&[e]), true)?;
        p.insert(&n("dw.kernel"), glorot(&mut rng, &[k, e], k, k), true)?;
        p.insert(&n("bn.gamma"), Tensor::full(&[e], T::one()), true)?;
        p.insert(&n("bn.beta"), Tensor::zeros(&[e]), true)?;
        p.insert(&n("bn.running_mean"), Tensor::zeros(&[e]), false)?;
        p.insert(&n("bn.running_var"), Tensor::full(&[e], T::one()), false)?;
        p.insert(&n("eca.w"), glorot(&mut rng, &[cfg.k_eca], cfg.k_eca, cfg.k_eca), true)?;
        p.insert(&n("project.w"), glorot(&mut rng, &[e, d], e, d), true)?;
        p.insert(&n("project.b"), Tensor::zeros(&[d]), true)?;
        layers.push(format!("conv_block{i}"));
    }
    for i in 0..cfg.transformer_blocks {
        let n = |s: &str| format!("tf{i}.{s}");
        for ln in ["ln1", "ln2"] {
            p.insert(&n(&format!("{ln}.gamma")), Tensor::full(&[d], T::one()), true)?;
            p.insert(&n(&format!("{ln}.beta")), Tensor::zeros(&[d]), true)?;
        }
        for w in ["wq", "wk", "wv", "wo"] {
            p.insert(&n(&format!("attn.{w}")), glorot(&mut rng, &[d, d], d, d), true)?;
        }
        p.insert(&n("ffn.w1"), glorot(&mut rng, &[d, fh], d, fh), true)?;
        p.insert(&n("ffn.b1"), Tensor::zeros(&[fh]), true)?;
        p.insert(&n("ffn.w2"), glorot(&mut rng, &[fh, d], fh, d), true)?;
        p.insert(&n("ffn.b2"), Tensor::zeros(&[d]), true)?;
        layers.push(format!("transformer_block{i}"));
    }
    insert_head(&mut p, &mut rng, d, cfg.num_classes)?;
    layers.extend(["global_avg_pool", "dropout", "head", "softmax"].map(String::from));
    Ok((p, layers))
}

pub(super) fn forward<T: Scalar, R: Rng + ?Sized>(
    cfg: &ModelConfig,
    g: &mut Graph<T>,
    bind: &Binder<'_, T>,
    x: Var,
    mask: &SequenceMask,
    mode: Mode,
    rng: &mut R,
) -> Result<ForwardPass<T>> {
    let mut batch_stats = Vec::new();
    let (pw, pb) = (bind.get(g, "proj.w")?, bind.get(g, "proj.b")?);
    let x = g.linear(x, pw, Some(pb))?;
    let mut x = g.apply_mask(x, mask)?;
    for i in 0..cfg.conv_blocks {
        let n = |s: &str| format!("conv{i}.{s}");
        let (ew, eb) = (bind.get(g, &n("expand.w"))?, bind.get(g, &n("expand.b"))?);
        let h = g.linear(x, ew, Some(eb))?;
        let h = g.relu(h);
        let kernel = bind.get(g, &n("dw.kernel"))?;
        let h = depthwise_conv1d(g, h, kernel, None, mask)?;
        let (gamma, beta) = (bind.get(g, &n("bn.gamma"))?, bind.get(g, &n("bn.beta"))?);
        let running = bind.running(&n("bn"))?;
        let (h, stats) = batch_norm_1d(g, h, gamma, beta, &running, mask, mode, BN_EPS)?;
        if let Some(stats) = stats {
            batch_stats.push((n("bn"), stats));
        }
        let ew = bind.get(g, &n("eca.w"))?;
        let h = eca(g, h, ew, mask)?;
        let (qw, qb) = (bind.get(g, &n("project.w"))?, bind.get(g, &n("project.b"))?);
        let h = g.linear(h, qw, Some(qb))?;
        let h = g.apply_mask(h, mask)?;
        x = g.add(x, h)?;
    }
    for i in 0..cfg.transformer_blocks {
        let n = |s: &str| format!("tf{i}.{s}");
        let (g1, b1) = (bind.get(g, &n("ln1.gamma"))?, bind.get(g, &n("ln1.beta"))?);
        let h = layer_norm(g, x, g1, b1, LN_EPS)?;
        let w = MhsaWeights {
            wq: bind.get(g, &n("attn.wq"))?,
            wk: bind.get(g, &n("attn.wk"))?,
            wv: bind.get(g, &n("attn.wv"))?,
            wo: bind.get(g, &n("attn.wo"))?,
        };
        let h = mhsa(g, h, cfg.heads, w, mask)?;
        x = g.add(x, h)?;
        let (g2, b2) = (bind.get(g, &n("ln2.gamma"))?, bind.get(g, &n("ln2.beta"))?);
        let h = layer_norm(g, x, g2, b2, LN_EPS)?;
        let (w1, fb1) = (bind.get(g, &n("ffn.w1"))?, bind.get(g, &n("ffn.b1"))?);
        let (w2, fb2) = (bind.get(g, &n("ffn.w2"))?, bind.get(g, &n("ffn.b2"))?);
        let h = ffn(g, h, w1, fb1, w2, fb2, Activation::Relu)?;
        let h = g.add(x, h)?;
        x = g.apply_mask(h, mask)?;
    }
    let pooled = masked_pool(g, x, mask, PoolKind::GlobalAvg)?;
    let pooled = dropout(g, pooled, cfg.dropout, mode, rng)?;
    let (ow, ob) = (bind.get(g, super::HEAD_WEIGHT)?, bind.get(g, super::HEAD_BIAS)?);
    let logits = g.linear(pooled, ow, Some(ob))?;
    Ok(ForwardPass { logits, batch_stats })
}
