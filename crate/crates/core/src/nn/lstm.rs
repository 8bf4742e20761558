//! Fused LSTM layer with hand-written backpropagation through time.
//!
//! Gates are packed `[i, f, g, o]` along the last axis of every weight:
//!
//! ```text
//! z_t = x_t Wx + h_{t-1} Wh + b
//! i, f, o = sigmoid(z_i), sigmoid(z_f), sigmoid(z_o);  g = tanh(z_g)
//! c_t = f * c_{t-1} + i * g
//! h_t = o * tanh(c_t)
//! ```
//!
//! At padded timesteps the state is carried through unchanged and the
//! emitted output is zero.

use super::mask::SequenceMask;
use crate::autograd::{check_bsc, sigmoid, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    /// `[features, 4 * units]`
    pub input: Var,
    /// `[units, 4 * units]`
    pub recurrent: Var,
    /// `[4 * units]`
    pub bias: Var,
}

/// Runs the recurrence over `[batch, seq, features]` and returns the full
/// hidden sequence `[batch, seq, units]`.
pub fn lstm_layer<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    w: LstmWeights,
    units: usize,
    mask: &SequenceMask,
) -> Result<Var> {
    let xs = g.shape(x).to_vec();
    check_bsc("lstm_layer", &xs, mask)?;
    let (batch, len, feat) = (xs[0], xs[1], xs[2]);
    let g4 = 4 * units;
    if g.shape(w.input) != [feat, g4] || g.shape(w.recurrent) != [units, g4] || g.shape(w.bias) != [g4] {
        return Err(Error::shape("lstm_layer", &xs, g.shape(w.input)));
    }

    // Input contribution for every timestep at once: [batch * seq, 4u].
    let mut xz = vec![T::zero(); batch * len * g4];
    {
        let bd = g.data(w.bias);
        for row in xz.chunks_mut(g4) {
            row.copy_from_slice(bd);
        }
        T::gemm(batch * len, feat, g4, g.data(x), false, g.data(w.input), false, &mut xz, true);
    }

    // Activated gates per step [seq, batch, 4u]; states [seq + 1, batch, u].
    let mut gates = vec![T::zero(); len * batch * g4];
    let mut hs = vec![T::zero(); (len + 1) * batch * units];
    let mut cs = vec![T::zero(); (len + 1) * batch * units];
    let mut out = vec![T::zero(); batch * len * units];
    {
        let wh = g.data(w.recurrent);
        let mut z = vec![T::zero(); batch * g4];
        for t in 0..len {
            for b in 0..batch {
                z[b * g4..(b + 1) * g4].copy_from_slice(&xz[(b * len + t) * g4..(b * len + t + 1) * g4]);
            }
            let (prev, next) = hs.split_at_mut((t + 1) * batch * units);
            let h_prev = &prev[t * batch * units..];
            T::gemm(batch, units, g4, h_prev, false, wh, false, &mut z, true);
            let (cprev, cnext) = cs.split_at_mut((t + 1) * batch * units);
            let c_prev = &cprev[t * batch * units..];
            let h_next = &mut next[..batch * units];
            let c_next = &mut cnext[..batch * units];
            let gt = &mut gates[t * batch * g4..(t + 1) * batch * g4];
            for b in 0..batch {
                let zb = &z[b * g4..(b + 1) * g4];
                let gb = &mut gt[b * g4..(b + 1) * g4];
                let valid = mask.is_valid(b, t);
                for u in 0..units {
                    let s = b * units + u;
                    if !valid {
                        h_next[s] = h_prev[s];
                        c_next[s] = c_prev[s];
                        continue;
                    }
                    let i = sigmoid(zb[u]);
                    let f = sigmoid(zb[units + u]);
                    let gg = zb[2 * units + u].tanh();
                    let o = sigmoid(zb[3 * units + u]);
                    gb[u] = i;
                    gb[units + u] = f;
                    gb[2 * units + u] = gg;
                    gb[3 * units + u] = o;
                    let c = f * c_prev[s] + i * gg;
                    let h = o * c.tanh();
                    c_next[s] = c;
                    h_next[s] = h;
                    out[(b * len + t) * units + u] = h;
                }
            }
        }
    }

    let mask = mask.clone();
    Ok(g.push(
        Tensor::new(&[batch, len, units], out)?,
        &[x, w.input, w.recurrent, w.bias],
        Box::new(move |ctx, gy| {
            let wh = ctx.value(w.recurrent).data();
            let mut dxz = vec![T::zero(); batch * len * g4];
            let mut dh = vec![T::zero(); batch * units];
            let mut dc = vec![T::zero(); batch * units];
            let mut dz = vec![T::zero(); batch * g4];
            let mut dwh = vec![T::zero(); units * g4];
            for t in (0..len).rev() {
                let gt = &gates[t * batch * g4..(t + 1) * batch * g4];
                let c_prev = &cs[t * batch * units..(t + 1) * batch * units];
                let c_cur = &cs[(t + 1) * batch * units..(t + 2) * batch * units];
                dz.iter_mut().for_each(|v| *v = T::zero());
                for b in 0..batch {
                    if !mask.is_valid(b, t) {
                        // State passes through: dh, dc unchanged, no gate grads.
                        continue;
                    }
                    let gb = &gt[b * g4..(b + 1) * g4];
                    let dzb = &mut dz[b * g4..(b + 1) * g4];
                    for u in 0..units {
                        let s = b * units + u;
                        let (i, f, gg, o) = (gb[u], gb[units + u], gb[2 * units + u], gb[3 * units + u]);
                        let tc = c_cur[s].tanh();
                        let dht = dh[s] + gy[(b * len + t) * units + u];
                        let dct = dc[s] + dht * o * (T::one() - tc * tc);
                        dzb[u] = dct * gg * i * (T::one() - i);
                        dzb[units + u] = dct * c_prev[s] * f * (T::one() - f);
                        dzb[2 * units + u] = dct * i * (T::one() - gg * gg);
                        dzb[3 * units + u] = dht * tc * o * (T::one() - o);
                        dc[s] = dct * f;
                        dh[s] = T::zero();
                    }
                }
                // dh_{t-1} += dz Wh^T ; dWh += h_{t-1}^T dz
                let h_prev = &hs[t * batch * units..(t + 1) * batch * units];
                T::gemm(batch, g4, units, &dz, false, wh, true, &mut dh, true);
                T::gemm(units, batch, g4, h_prev, true, &dz, false, &mut dwh, true);
                for b in 0..batch {
                    dxz[(b * len + t) * g4..(b * len + t + 1) * g4].copy_from_slice(&dz[b * g4..(b + 1) * g4]);
                }
            }
            if ctx.wants(x) {
                let (gx, wx) = ctx.grad_and_value(x, w.input);
                T::gemm(batch * len, g4, feat, &dxz, false, wx.data(), true, gx, true);
            }
            if ctx.wants(w.input) {
                let (gwx, xv) = ctx.grad_and_value(w.input, x);
                T::gemm(feat, batch * len, g4, xv.data(), true, &dxz, false, gwx, true);
            }
            ctx.accumulate(w.recurrent, &dwh);
            if ctx.wants(w.bias) {
                let gb = ctx.grad_mut(w.bias);
                for row in dxz.chunks(g4) {
                    gb.iter_mut().zip(row).for_each(|(a, &d)| *a = *a + d);
                }
            }
        }),
    ))
}
