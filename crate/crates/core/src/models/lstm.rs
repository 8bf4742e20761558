use rand::Rng;

use super::{insert_head, insert_input_norm, Binder, ForwardPass, ModelConfig};
use crate::autograd::{Graph, Var};
use crate::data::rng::stream;
use crate::error::Result;
use crate::nn::{dropout, glorot_uniform as glorot, lstm_layer, LstmWeights, Mode, ParamStore, SequenceMask};
use crate::tensor::{Scalar, Tensor};

pub(super) fn init<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<(ParamStore<T>, Vec<String>)> {
    let mut rng = stream(seed, "init");
    let (f, u, h) = (cfg.features, cfg.lstm_units, cfg.head_hidden);
    let mut p = ParamStore::new();
    insert_input_norm(&mut p, f)?;
    p.insert("lstm.input", glorot(&mut rng, &[f, 4 * u], f, 4 * u), true)?;
    p.insert("lstm.recurrent", glorot(&mut rng, &[u, 4 * u], u, 4 * u), true)?;
    // Forget-gate bias starts at 1.
    let mut bias = vec![T::zero(); 4 * u];
    bias[u..2 * u].iter_mut().for_each(|b| *b = T::one());
    p.insert("lstm.bias", Tensor::new(&[4 * u], bias)?, true)?;
    let flat = cfg.seq_len * u;
    p.insert("hidden.w", glorot(&mut rng, &[flat, h], flat, h), true)?;
    p.insert("hidden.b", Tensor::zeros(&[h]), true)?;
    insert_head(&mut p, &mut rng, h, cfg.num_classes)?;
    let layers = ["lstm", "relu", "dropout", "flatten", "hidden", "relu", "dropout", "head", "softmax"]
        .map(String::from)
        .to_vec();
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
    let batch = g.shape(x)[0];
    let w = LstmWeights {
        input: bind.get(g, "lstm.input")?,
        recurrent: bind.get(g, "lstm.recurrent")?,
        bias: bind.get(g, "lstm.bias")?,
    };
    let h = lstm_layer(g, x, w, cfg.lstm_units, mask)?;
    let h = g.relu(h);
    let h = dropout(g, h, cfg.dropout, mode, rng)?;
    let h = g.reshape(h, &[batch, cfg.seq_len * cfg.lstm_units])?;
    let (hw, hb) = (bind.get(g, "hidden.w")?, bind.get(g, "hidden.b")?);
    let h = g.linear(h, hw, Some(hb))?;
    let h = g.relu(h);
    let h = dropout(g, h, cfg.dropout, mode, rng)?;
    let (ow, ob) = (bind.get(g, super::HEAD_WEIGHT)?, bind.get(g, super::HEAD_BIAS)?);
    let logits = g.linear(h, ow, Some(ob))?;
    Ok(ForwardPass {
        logits,
        batch_stats: Vec::new(),
    })
}
