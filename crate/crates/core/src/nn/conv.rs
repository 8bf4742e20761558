use super::mask::SequenceMask;
use super::pool::{masked_pool, PoolKind};
use crate::autograd::{check_bsc, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

fn zero_padded<T: Scalar>(data: &[T], mask: &SequenceMask, ch: usize) -> Vec<T> {
    let mut out = data.to_vec();
    for (pos, &ok) in mask.valid().iter().enumerate() {
        if !ok {
            out[pos * ch..(pos + 1) * ch].iter_mut().for_each(|v| *v = T::zero());
        }
    }
    out
}

/// Range of output rows `t` for which input row `t + offset` exists.
fn tap_rows(len: usize, offset: isize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (len as isize - offset).clamp(0, len as isize) as usize;
    (lo, hi.max(lo))
}

/// Temporal cross-correlation with "same" zero padding.
///
/// `x` is `[batch, seq, ch_in]`, `kernel` is `[k, ch_in, ch_out]` with odd
/// `k`, `bias` is `[ch_out]`. Padded input frames are zeroed before the
/// convolution and padded output frames are zeroed after it.
pub fn conv1d<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    kernel: Var,
    bias: Option<Var>,
    mask: &SequenceMask,
) -> Result<Var> {
    let xs = g.shape(x).to_vec();
    check_bsc("conv1d", &xs, mask)?;
    let ks = g.shape(kernel).to_vec();
    if ks.len() != 3 || ks[1] != xs[2] {
        return Err(Error::shape("conv1d", &xs, &ks));
    }
    let (k, cin, cout) = (ks[0], ks[1], ks[2]);
    if k % 2 == 0 {
        return Err(Error::Config(format!("conv1d kernel width must be odd, got {k}")));
    }
    if let Some(b) = bias {
        if g.shape(b) != [cout] {
            return Err(Error::shape("conv1d bias", g.shape(b), &[cout]));
        }
    }
    let (batch, len) = (xs[0], xs[1]);
    let half = (k / 2) as isize;
    let xm = zero_padded(g.data(x), mask, cin);
    let mut out = vec![T::zero(); batch * len * cout];
    {
        let kd = g.data(kernel);
        for b in 0..batch {
            for j in 0..k {
                let off = j as isize - half;
                let (lo, hi) = tap_rows(len, off);
                if lo == hi {
                    continue;
                }
                let src = (b * len) as isize + lo as isize + off;
                let src = src as usize;
                T::gemm(
                    hi - lo,
                    cin,
                    cout,
                    &xm[src * cin..(src + hi - lo) * cin],
                    false,
                    &kd[j * cin * cout..(j + 1) * cin * cout],
                    false,
                    &mut out[(b * len + lo) * cout..(b * len + hi) * cout],
                    true,
                );
            }
        }
        if let Some(bv) = bias {
            let bd = g.data(bv);
            for row in out.chunks_mut(cout) {
                row.iter_mut().zip(bd).for_each(|(o, &c)| *o = *o + c);
            }
        }
    }
    let out = zero_padded(&out, mask, cout);
    let mask = mask.clone();
    let mut parents = vec![x, kernel];
    parents.extend(bias);
    Ok(g.push(
        Tensor::new(&[batch, len, cout], out)?,
        &parents,
        Box::new(move |ctx, gy| {
            let gy = zero_padded(gy, &mask, cout);
            if ctx.wants(x) {
                let kd = ctx.value(kernel).data();
                let mut gxm = vec![T::zero(); batch * len * cin];
                for b in 0..batch {
                    for j in 0..k {
                        let off = j as isize - half;
                        let (lo, hi) = tap_rows(len, off);
                        if lo == hi {
                            continue;
                        }
                        let dst = ((b * len) as isize + lo as isize + off) as usize;
                        T::gemm(
                            hi - lo,
                            cout,
                            cin,
                            &gy[(b * len + lo) * cout..(b * len + hi) * cout],
                            false,
                            &kd[j * cin * cout..(j + 1) * cin * cout],
                            true,
                            &mut gxm[dst * cin..(dst + hi - lo) * cin],
                            true,
                        );
                    }
                }
                let gxm = zero_padded(&gxm, &mask, cin);
                ctx.accumulate(x, &gxm);
            }
            if ctx.wants(kernel) {
                let gk = ctx.grad_mut(kernel);
                for b in 0..batch {
                    for j in 0..k {
                        let off = j as isize - half;
                        let (lo, hi) = tap_rows(len, off);
                        if lo == hi {
                            continue;
                        }
                        let src = ((b * len) as isize + lo as isize + off) as usize;
                        T::gemm(
                            cin,
                            hi - lo,
                            cout,
                            &xm[src * cin..(src + hi - lo) * cin],
                            true,
                            &gy[(b * len + lo) * cout..(b * len + hi) * cout],
                            false,
                            &mut gk[j * cin * cout..(j + 1) * cin * cout],
                            true,
                        );
                    }
                }
            }
            if let Some(bv) = bias {
                if ctx.wants(bv) {
                    let gb = ctx.grad_mut(bv);
                    for row in gy.chunks(cout) {
                        gb.iter_mut().zip(row).for_each(|(a, &d)| *a = *a + d);
                    }
                }
            }
        }),
    ))
}

/// Per-channel temporal convolution: `kernel` is `[k, ch]`, no channel
/// mixing. Same masking contract as [`conv1d`].
pub fn depthwise_conv1d<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    kernel: Var,
    bias: Option<Var>,
    mask: &SequenceMask,
) -> Result<Var> {
    let xs = g.shape(x).to_vec();
    check_bsc("depthwise_conv1d", &xs, mask)?;
    let ks = g.shape(kernel).to_vec();
    if ks.len() != 2 || ks[1] != xs[2] {
        return Err(Error::shape("depthwise_conv1d", &xs, &ks));
    }
    let (k, ch) = (ks[0], ks[1]);
    if k % 2 == 0 {
        return Err(Error::Config(format!("depthwise_conv1d kernel width must be odd, got {k}")));
    }
    if let Some(b) = bias {
        if g.shape(b) != [ch] {
            return Err(Error::shape("depthwise_conv1d bias", g.shape(b), &[ch]));
        }
    }
    let (batch, len) = (xs[0], xs[1]);
    let half = (k / 2) as isize;
    let xm = zero_padded(g.data(x), mask, ch);
    let mut out = vec![T::zero(); batch * len * ch];
    {
        let kd = g.data(kernel);
        for b in 0..batch {
            for j in 0..k {
                let off = j as isize - half;
                let (lo, hi) = tap_rows(len, off);
                let w = &kd[j * ch..(j + 1) * ch];
                for t in lo..hi {
                    let src = ((b * len + t) as isize + off) as usize * ch;
                    let dst = (b * len + t) * ch;
                    for c in 0..ch {
                        out[dst + c] = out[dst + c] + xm[src + c] * w[c];
                    }
                }
            }
        }
        if let Some(bv) = bias {
            let bd = g.data(bv);
            for row in out.chunks_mut(ch) {
                row.iter_mut().zip(bd).for_each(|(o, &c)| *o = *o + c);
            }
        }
    }
    let out = zero_padded(&out, mask, ch);
    let mask = mask.clone();
    let mut parents = vec![x, kernel];
    parents.extend(bias);
    Ok(g.push(
        Tensor::new(&[batch, len, ch], out)?,
        &parents,
        Box::new(move |ctx, gy| {
            let gy = zero_padded(gy, &mask, ch);
            if ctx.wants(x) {
                let kd = ctx.value(kernel).data();
                let mut gxm = vec![T::zero(); batch * len * ch];
                for b in 0..batch {
                    for j in 0..k {
                        let off = j as isize - half;
                        let (lo, hi) = tap_rows(len, off);
                        let w = &kd[j * ch..(j + 1) * ch];
                        for t in lo..hi {
                            let src = ((b * len + t) as isize + off) as usize * ch;
                            let dst = (b * len + t) * ch;
                            for c in 0..ch {
                                gxm[src + c] = gxm[src + c] + gy[dst + c] * w[c];
                            }
                        }
                    }
                }
                let gxm = zero_padded(&gxm, &mask, ch);
                ctx.accumulate(x, &gxm);
            }
            if ctx.wants(kernel) {
                let gk = ctx.grad_mut(kernel);
                for b in 0..batch {
                    for j in 0..k {
                        let off = j as isize - half;
                        let (lo, hi) = tap_rows(len, off);
                        for t in lo..hi {
                            let src = ((b * len + t) as isize + off) as usize * ch;
                            let dst = (b * len + t) * ch;
                            for c in 0..ch {
                                gk[j * ch + c] = gk[j * ch + c] + xm[src + c] * gy[dst + c];
                            }
                        }
                    }
                }
            }
            if let Some(bv) = bias {
                if ctx.wants(bv) {
                    let gb = ctx.grad_mut(bv);
                    for row in gy.chunks(ch) {
                        gb.iter_mut().zip(row).for_each(|(a, &d)| *a = *a + d);
                    }
                }
            }
        }),
    ))
}

/// Convolution along the channel axis of a `[batch, ch]` descriptor with a
/// `[k]` kernel, zero padding, no bias.
pub fn channel_conv<T: Scalar>(g: &mut Graph<T>, d: Var, weight: Var) -> Result<Var> {
    let ds = g.shape(d).to_vec();
    let ws = g.shape(weight).to_vec();
    if ds.len() != 2 || ws.len() != 1 {
        return Err(Error::shape("channel_conv", &ds, &ws));
    }
    let k = ws[0];
    if k.is_multiple_of(2) {
        return Err(Error::Config(format!("ECA kernel width must be odd, got {k}")));
    }
    let (batch, ch) = (ds[0], ds[1]);
    let half = (k / 2) as isize;
    let mut out = vec![T::zero(); batch * ch];
    {
        let (dd, wd) = (g.data(d), g.data(weight));
        for b in 0..batch {
            for c in 0..ch {
                let mut acc = T::zero();
                for (j, &w) in wd.iter().enumerate() {
                    let src = c as isize + j as isize - half;
                    if (0..ch as isize).contains(&src) {
                        acc = acc + w * dd[b * ch + src as usize];
                    }
                }
                out[b * ch + c] = acc;
            }
        }
    }
    Ok(g.push(
        Tensor::new(&[batch, ch], out)?,
        &[d, weight],
        Box::new(move |ctx, gy| {
            let dd = ctx.value(d).data();
            let wd = ctx.value(weight).data();
            let mut gd = vec![T::zero(); batch * ch];
            let mut gw = vec![T::zero(); k];
            for b in 0..batch {
                for c in 0..ch {
                    let go = gy[b * ch + c];
                    for j in 0..k {
                        let src = c as isize + j as isize - half;
                        if (0..ch as isize).contains(&src) {
                            let s = b * ch + src as usize;
                            gd[s] = gd[s] + go * wd[j];
                            gw[j] = gw[j] + go * dd[s];
                        }
                    }
                }
            }
            ctx.accumulate(d, &gd);
            ctx.accumulate(weight, &gw);
        }),
    ))
}

/// Channel attention scales in `(0, 1)`, shape `[batch, ch]`: sigmoid of a
/// channel-axis convolution over `masked_avg(x) + masked_max(x)`.
pub fn eca_scales<T: Scalar>(g: &mut Graph<T>, x: Var, weight: Var, mask: &SequenceMask) -> Result<Var> {
    let avg = masked_pool(g, x, mask, PoolKind::GlobalAvg)?;
    let max = masked_pool(g, x, mask, PoolKind::GlobalMax)?;
    let desc = g.add(avg, max)?;
    let logits = channel_conv(g, desc, weight)?;
    Ok(g.sigmoid(logits))
}

/// Efficient channel attention: rescales every channel of `x` by its
/// [`eca_scales`] value.
pub fn eca<T: Scalar>(g: &mut Graph<T>, x: Var, weight: Var, mask: &SequenceMask) -> Result<Var> {
    let scale = eca_scales(g, x, weight, mask)?;
    g.scale_channels(x, scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn conv1d_identity_kernel() {
        let mut g = Graph::<f64>::new();
        let vals = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let x = g.constant(t(&[1, 3, 2], &vals));
        let k = g.constant(t(&[1, 2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let y = conv1d(&mut g, x, k, None, &SequenceMask::full(1, 3)).unwrap();
        assert_eq!(g.data(y), &vals);
    }

    #[test]
    fn conv1d_averaging_kernel() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 3, 1], &[0.0, 3.0, 0.0]));
        let k = g.constant(t(&[3, 1, 1], &[1.0 / 3.0; 3]));
        let y = conv1d(&mut g, x, k, None, &SequenceMask::full(1, 3)).unwrap();
        assert!((g.data(y)[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn conv1d_padded_outputs_are_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[1, 4, 2], 1.0));
        let k = g.constant(Tensor::full(&[3, 2, 3], 0.5));
        let b = g.constant(Tensor::full(&[3], 2.0));
        let mask = SequenceMask::from_lengths(&[2], 4).unwrap();
        let y = conv1d(&mut g, x, k, Some(b), &mask).unwrap();
        assert!(g.data(y)[6..].iter().all(|&v| v == 0.0));
        assert!(g.data(y)[..6].iter().all(|&v| v != 0.0));
        let even = g.constant(Tensor::zeros(&[2, 2, 3]));
        assert!(conv1d(&mut g, x, even, None, &mask).is_err());
    }

    #[test]
    fn conv1d_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (b, len, cin, cout, k) = (2, 6, 3, 4, 5);
        let xv: Vec<f64> = (0..b * len * cin).map(|_| rng.random_range(-1.0..1.0)).collect();
        let kv: Vec<f64> = (0..k * cin * cout).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mask = SequenceMask::from_lengths(&[6, 4], len).unwrap();
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[b, len, cin], &xv));
        let kk = g.constant(t(&[k, cin, cout], &kv));
        let y = conv1d(&mut g, x, kk, None, &mask).unwrap();
        for bi in 0..b {
            for ti in 0..len {
                for o in 0..cout {
                    let mut want = 0.0;
                    if mask.is_valid(bi, ti) {
                        for j in 0..k {
                            let src = ti as isize + j as isize - 2;
                            if src < 0 || src >= len as isize || !mask.is_valid(bi, src as usize) {
                                continue;
                            }
                            for i in 0..cin {
                                want += xv[(bi * len + src as usize) * cin + i] * kv[(j * cin + i) * cout + o];
                            }
                        }
                    }
                    let got = g.data(y)[(bi * len + ti) * cout + o];
                    assert!((got - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn depthwise_matches_full_conv_with_diagonal_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (b, len, ch, k) = (2, 5, 3, 3);
        let xv: Vec<f64> = (0..b * len * ch).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dw: Vec<f64> = (0..k * ch).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut full = vec![0.0; k * ch * ch];
        for j in 0..k {
            for c in 0..ch {
                full[(j * ch + c) * ch + c] = dw[j * ch + c];
            }
        }
        let mask = SequenceMask::from_lengths(&[5, 3], len).unwrap();
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[b, len, ch], &xv));
        let kd = g.constant(t(&[k, ch], &dw));
        let kf = g.constant(t(&[k, ch, ch], &full));
        let a = depthwise_conv1d(&mut g, x, kd, None, &mask).unwrap();
        let c = conv1d(&mut g, x, kf, None, &mask).unwrap();
        for (p, q) in g.data(a).iter().zip(g.data(c)) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn eca_zero_weights_halve_input() {
        let mut g = Graph::<f64>::new();
        let vals = [1.0, -2.0, 3.0, 4.0, 0.5, 6.0];
        let x = g.constant(t(&[1, 2, 3], &vals));
        let w = g.constant(Tensor::zeros(&[5]));
        let y = eca(&mut g, x, w, &SequenceMask::full(1, 2)).unwrap();
        for (a, b) in g.data(y).iter().zip(vals) {
            assert_eq!(*a, 0.5 * b);
        }
    }

    #[test]
    fn eca_scalar_closed_form() {
        let (c, w) = (0.7, 1.3);
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[1, 4, 1], c));
        let wv = g.constant(t(&[1], &[w]));
        let y = eca(&mut g, x, wv, &SequenceMask::full(1, 4)).unwrap();
        let want = c / (1.0 + (-2.0 * c * w).exp());
        for &v in g.data(y) {
            assert!((v - want).abs() < 1e-12);
        }
    }

    #[test]
    fn eca_scales_in_open_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vals: Vec<f64> = (0..3 * 7 * 8).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[3, 7, 8], &vals));
        let w = g.constant(t(&[5], &[0.9, -1.5, 2.0, 0.3, -0.7]));
        let mask = SequenceMask::from_lengths(&[7, 2, 5], 7).unwrap();
        let s = eca_scales(&mut g, x, w, &mask).unwrap();
        assert!(g.data(s).iter().all(|&v| v > 0.0 && v < 1.0));
        let even = g.constant(Tensor::zeros(&[4]));
        assert!(channel_conv(&mut g, s, even).is_err());
    }
}
