use super::mask::SequenceMask;
use super::Mode;
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Normalizes each position over its last (channel) axis, then applies the
/// affine `gamma`, `beta`.
pub fn layer_norm<T: Scalar>(g: &mut Graph<T>, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
    if eps <= 0.0 {
        return Err(Error::Config(format!("layer_norm eps must be positive, got {eps}")));
    }
    let shape = g.shape(x).to_vec();
    let ch = *shape.last().ok_or_else(|| Error::shape("layer_norm", &shape, &[1]))?;
    if g.shape(gamma) != [ch] || g.shape(beta) != [ch] {
        return Err(Error::shape("layer_norm", &shape, g.shape(gamma)));
    }
    let eps = T::from_f64_lossy(eps);
    let n = T::from_usize(ch).unwrap();
    let rows = g.value(x).len() / ch;
    let mut xhat = vec![T::zero(); rows * ch];
    let mut inv_std = vec![T::zero(); rows];
    let mut out = vec![T::zero(); rows * ch];
    {
        let (xd, gd, bd) = (g.data(x), g.data(gamma), g.data(beta));
        for r in 0..rows {
            let row = &xd[r * ch..(r + 1) * ch];
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..ch {
                let h = (row[c] - mean) * is;
                xhat[r * ch + c] = h;
                out[r * ch + c] = h * gd[c] + bd[c];
            }
        }
    }
    Ok(g.push(
        Tensor::new(&shape, out)?,
        &[x, gamma, beta],
        Box::new(move |ctx, gy| {
            let gd = ctx.value(gamma).data();
            if ctx.wants(x) {
                let gx = ctx.grad_mut(x);
                let mut dxhat = vec![T::zero(); ch];
                for r in 0..rows {
                    let o = r * ch;
                    let mut sum = T::zero();
                    let mut dot = T::zero();
                    for c in 0..ch {
                        dxhat[c] = gy[o + c] * gd[c];
                        sum = sum + dxhat[c];
                        dot = dot + dxhat[c] * xhat[o + c];
                    }
                    for c in 0..ch {
                        gx[o + c] = gx[o + c] + inv_std[r] * (dxhat[c] - sum / n - xhat[o + c] * dot / n);
                    }
                }
            }
            if ctx.wants(gamma) {
                let gg = ctx.grad_mut(gamma);
                for r in 0..rows {
                    for c in 0..ch {
                        gg[c] = gg[c] + gy[r * ch + c] * xhat[r * ch + c];
                    }
                }
            }
            if ctx.wants(beta) {
                let gb = ctx.grad_mut(beta);
                for r in 0..rows {
                    for c in 0..ch {
                        gb[c] = gb[c] + gy[r * ch + c];
                    }
                }
            }
        }),
    ))
}

/// Per-channel statistics of one batch-norm call. In train mode these are the
/// masked batch statistics used for normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats<T: Scalar> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Batch normalization over `[batch, seq, ch]` with statistics taken from
/// valid frames only. Padded positions of the output are exactly zero.
///
/// Train mode normalizes with the masked batch statistics and returns them;
/// infer mode uses `running`.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm_1d<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    running: &BatchNormStats<T>,
    mask: &SequenceMask,
    mode: Mode,
    eps: f64,
) -> Result<(Var, Option<BatchNormStats<T>>)> {
    let shape = g.shape(x).to_vec();
    crate::autograd::check_bsc("batch_norm_1d", &shape, mask)?;
    let ch = shape[2];
    if g.shape(gamma) != [ch] || g.shape(beta) != [ch] || running.mean.len() != ch || running.var.len() != ch {
        return Err(Error::shape("batch_norm_1d", &shape, g.shape(gamma)));
    }
    let count = mask.valid_count();
    if count == 0 {
        return Err(Error::Mask("batch_norm_1d: every frame in the batch is padding".into()));
    }
    let valid = mask.valid().to_vec();
    let eps = T::from_f64_lossy(eps);
    let xd = g.data(x);

    let (mean, var) = match mode {
        Mode::Train => {
            let n = T::from_usize(count).unwrap();
            let mut mean = vec![T::zero(); ch];
            for (pos, _) in valid.iter().enumerate().filter(|(_, &ok)| ok) {
                for c in 0..ch {
                    mean[c] = mean[c] + xd[pos * ch + c];
                }
            }
            mean.iter_mut().for_each(|m| *m = *m / n);
            let mut var = vec![T::zero(); ch];
            for (pos, _) in valid.iter().enumerate().filter(|(_, &ok)| ok) {
                for c in 0..ch {
                    let d = xd[pos * ch + c] - mean[c];
                    var[c] = var[c] + d * d;
                }
            }
            var.iter_mut().for_each(|v| *v = *v / n);
            (mean, var)
        }
        Mode::Infer => (running.mean.clone(), running.var.clone()),
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); xd.len()];
    let mut out = vec![T::zero(); xd.len()];
    {
        let (gd, bd) = (g.data(gamma), g.data(beta));
        for (pos, _) in valid.iter().enumerate().filter(|(_, &ok)| ok) {
            for c in 0..ch {
                let i = pos * ch + c;
                xhat[i] = (xd[i] - mean[c]) * inv_std[c];
                out[i] = xhat[i] * gd[c] + bd[c];
            }
        }
    }
    let stats = (mode == Mode::Train).then(|| BatchNormStats {
        mean: mean.clone(),
        var: var.clone(),
    });
    let train = mode == Mode::Train;
    let y = g.push(
        Tensor::new(&shape, out)?,
        &[x, gamma, beta],
        Box::new(move |ctx, gy| {
            let gd = ctx.value(gamma).data();
            if ctx.wants(x) {
                let gx = ctx.grad_mut(x);
                if train {
                    let n = T::from_usize(count).unwrap();
                    let mut sum = vec![T::zero(); ch];
                    let mut dot = vec![T::zero(); ch];
                    for (pos, _) in valid.iter().enumerate().filter(|(_, &ok)| ok) {
                        for c in 0..ch {
                            let d = gy[pos * ch + c] * gd[c];
                            sum[c] = sum[c] + d;
                            dot[c] = dot[c] + d * xhat[pos * ch + c];
                        }
                    }
                    for (pos, _) in valid.iter().enumerate().filter(|(_, &ok)| ok) {
                        for c in 0..ch {
                            let i = pos * ch + c;
                            let d = gy[i] * gd[c];
                            gx[i] = gx[i] + inv_std[c] * (d - sum[c] / n - xhat[i] * dot[c] / n);
                        }
                    }
                } else {
                    for (pos, _) in valid.iter().enumerate().filter(|(_, &ok)| ok) {
                        for c in 0..ch {
                            let i = pos * ch + c;
                            gx[i] = gx[i] + gy[i] * gd[c] * inv_std[c];
                        }
                    }
                }
            }
            if ctx.wants(gamma) {
                let gg = ctx.grad_mut(gamma);
                for (pos, _) in valid.iter().enumerate().filter(|(_, &ok)| ok) {
                    for c in 0..ch {
                        gg[c] = gg[c] + gy[pos * ch + c] * xhat[pos * ch + c];
                    }
                }
            }
            if ctx.wants(beta) {
                let gb = ctx.grad_mut(beta);
                for (pos, _) in valid.iter().enumerate().filter(|(_, &ok)| ok) {
                    for c in 0..ch {
                        gb[c] = gb[c] + gy[pos * ch + c];
                    }
                }
            }
        }),
    );
    Ok((y, stats))
}

impl<T: Scalar> BatchNormStats<T> {
    pub fn identity(ch: usize) -> Self {
        Self {
            mean: vec![T::zero(); ch],
            var: vec![T::one(); ch],
        }
    }

    /// `running = momentum * running + (1 - momentum) * batch`.
    pub fn update(&mut self, batch: &BatchNormStats<T>, momentum: f64) {
        let m = T::from_f64_lossy(momentum);
        let k = T::one() - m;
        for (r, &b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = m * *r + k * b;
        }
        for (r, &b) in self.var.iter_mut().zip(&batch.var) {
            *r = m * *r + k * b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    fn affine(g: &mut Graph<f64>, ch: usize, gamma: f64, beta: f64) -> (Var, Var) {
        (
            g.constant(Tensor::full(&[ch], gamma)),
            g.constant(Tensor::full(&[ch], beta)),
        )
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 1, 3], &[5.0, 5.0, 5.0]));
        let (ga, be) = affine(&mut g, 3, 1.0, 0.0);
        let y = layer_norm(&mut g, x, ga, be, 1e-5).unwrap();
        assert_eq!(g.data(y), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn layer_norm_symmetric_pair() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 1, 2], &[1.0, -1.0]));
        let (ga, be) = affine(&mut g, 2, 1.0, 0.0);
        let y = layer_norm(&mut g, x, ga, be, 1e-5).unwrap();
        assert!((g.data(y)[0] - 1.0).abs() < 1e-4 && (g.data(y)[1] + 1.0).abs() < 1e-4);
    }

    #[test]
    fn layer_norm_matches_scalar_oracle() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 1, 3], &[1.0, 2.0, 3.0]));
        let (ga, be) = affine(&mut g, 3, 2.0, 1.0);
        let y = layer_norm(&mut g, x, ga, be, 1e-5).unwrap();
        let mean = 2.0;
        let var: f64 = (1.0 + 0.0 + 1.0) / 3.0;
        for (i, v) in [1.0, 2.0, 3.0].iter().enumerate() {
            let want = (v - mean) / (var + 1e-5).sqrt() * 2.0 + 1.0;
            assert!((g.data(y)[i] - want).abs() < 1e-12);
        }
        assert!(layer_norm(&mut g, x, ga, be, 0.0).is_err());
    }

    #[test]
    fn batch_norm_infer_identity_with_default_running_stats() {
        let mut g = Graph::<f64>::new();
        let vals = [0.3, -1.2, 4.0, 2.5];
        let x = g.constant(t(&[1, 2, 2], &vals));
        let (ga, be) = affine(&mut g, 2, 1.0, 0.0);
        let mask = SequenceMask::full(1, 2);
        let (y, stats) = batch_norm_1d(&mut g, x, ga, be, &BatchNormStats::identity(2), &mask, Mode::Infer, 1e-3).unwrap();
        assert!(stats.is_none());
        for (a, b) in g.data(y).iter().zip(vals) {
            assert!((a - b / (1.0f64 + 1e-3).sqrt()).abs() < 1e-12);
            assert!((a - b).abs() < 1e-3 * b.abs().max(1.0));
        }
    }

    #[test]
    fn batch_norm_train_constant_input_is_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[2, 3, 2], 7.5));
        let (ga, be) = affine(&mut g, 2, 1.0, 0.0);
        let mask = SequenceMask::full(2, 3);
        let (y, _) = batch_norm_1d(&mut g, x, ga, be, &BatchNormStats::identity(2), &mask, Mode::Train, 1e-3).unwrap();
        assert!(g.data(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_norm_train_uses_valid_frames_only() {
        // Two samples, one channel, max_len 3. Sample 1 is valid for frame 0
        // only; its padded frames hold large garbage.
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[2, 3, 1], &[1.0, 2.0, 3.0, 10.0, 500.0, -900.0]));
        let (ga, be) = affine(&mut g, 1, 1.0, 0.0);
        let mask = SequenceMask::from_lengths(&[3, 1], 3).unwrap();
        let (y, stats) = batch_norm_1d(&mut g, x, ga, be, &BatchNormStats::identity(1), &mask, Mode::Train, 1e-3).unwrap();
        let valid = [1.0, 2.0, 3.0, 10.0];
        let mean = valid.iter().sum::<f64>() / 4.0;
        let var = valid.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        let stats = stats.unwrap();
        assert!((stats.mean[0] - mean).abs() < 1e-12);
        assert!((stats.var[0] - var).abs() < 1e-12);
        let out = g.data(y);
        assert_eq!(&out[4..6], &[0.0, 0.0]);
        assert!((out[3] - (10.0 - mean) / (var + 1e-3).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn batch_norm_rejects_all_masked_batch() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[0, 3, 1]));
        let (ga, be) = affine(&mut g, 1, 1.0, 0.0);
        let mask = SequenceMask::from_lengths(&[], 3).unwrap();
        assert!(batch_norm_1d(&mut g, x, ga, be, &BatchNormStats::identity(1), &mask, Mode::Train, 1e-3).is_err());
    }

    #[test]
    fn running_stats_momentum() {
        let mut r = BatchNormStats::<f64>::identity(1);
        r.update(&BatchNormStats { mean: vec![1.0], var: vec![3.0] }, 0.99);
        assert!((r.mean[0] - 0.01).abs() < 1e-15);
        assert!((r.var[0] - (0.99 + 0.03)).abs() < 1e-15);
    }
}
