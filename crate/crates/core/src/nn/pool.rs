use super::mask::SequenceMask;
use crate::autograd::{check_bsc, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    GlobalAvg,
    GlobalMax,
}

/// Reduces `[batch, seq, ch]` to `[batch, ch]` over valid frames only.
pub fn masked_pool<T: Scalar>(g: &mut Graph<T>, x: Var, mask: &SequenceMask, kind: PoolKind) -> Result<Var> {
    let xs = g.shape(x).to_vec();
    check_bsc("masked_pool", &xs, mask)?;
    let (batch, len, ch) = (xs[0], xs[1], xs[2]);
    let lengths = mask.lengths();
    if let Some(b) = lengths.iter().position(|&l| l == 0) {
        return Err(Error::Mask(format!("masked_pool: sample {b} has no valid frame")));
    }
    let xd = g.data(x);
    let mut out = vec![T::zero(); batch * ch];
    // For max pooling, the winning frame per (batch, channel); first wins ties.
    let mut argmax = vec![0usize; batch * ch];
    for b in 0..batch {
        let row = &mut out[b * ch..(b + 1) * ch];
        match kind {
            PoolKind::GlobalAvg => {
                for t in 0..len {
                    if !mask.is_valid(b, t) {
                        continue;
                    }
                    let src = &xd[(b * len + t) * ch..(b * len + t + 1) * ch];
                    row.iter_mut().zip(src).for_each(|(o, &v)| *o = *o + v);
                }
                let n = T::from_usize(lengths[b]).unwrap();
                row.iter_mut().for_each(|o| *o = *o / n);
            }
            PoolKind::GlobalMax => {
                row.copy_from_slice(&xd[b * len * ch..(b * len + 1) * ch]);
                for t in 1..len {
                    if !mask.is_valid(b, t) {
                        continue;
                    }
                    for c in 0..ch {
                        let v = xd[(b * len + t) * ch + c];
                        if v > row[c] {
                            row[c] = v;
                            argmax[b * ch + c] = t;
                        }
                    }
                }
            }
        }
    }
    let mask = mask.clone();
    Ok(g.push(
        Tensor::new(&[batch, ch], out)?,
        &[x],
        Box::new(move |ctx, gy| {
            let gx = ctx.grad_mut(x);
            for b in 0..batch {
                match kind {
                    PoolKind::GlobalAvg => {
                        let n = T::from_usize(lengths[b]).unwrap();
                        for t in 0..len {
                            if !mask.is_valid(b, t) {
                                continue;
                            }
                            for c in 0..ch {
                                let i = (b * len + t) * ch + c;
                                gx[i] = gx[i] + gy[b * ch + c] / n;
                            }
                        }
                    }
                    PoolKind::GlobalMax => {
                        for c in 0..ch {
                            let i = (b * len + argmax[b * ch + c]) * ch + c;
                            gx[i] = gx[i] + gy[b * ch + c];
                        }
                    }
                }
            }
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_valid_frame_returns_it() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_f64(&[1, 3, 2], &[4.0, -1.0, 9.0, 9.0, 9.0, 9.0]).unwrap());
        let mask = SequenceMask::from_lengths(&[1], 3).unwrap();
        let a = masked_pool(&mut g, x, &mask, PoolKind::GlobalAvg).unwrap();
        let m = masked_pool(&mut g, x, &mask, PoolKind::GlobalMax).unwrap();
        assert_eq!(g.data(a), &[4.0, -1.0]);
        assert_eq!(g.data(m), &[4.0, -1.0]);
    }

    #[test]
    fn padded_values_excluded() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_f64(&[1, 3, 1], &[1.0, 3.0, 100.0]).unwrap());
        let mask = SequenceMask::from_lengths(&[2], 3).unwrap();
        let a = masked_pool(&mut g, x, &mask, PoolKind::GlobalAvg).unwrap();
        let m = masked_pool(&mut g, x, &mask, PoolKind::GlobalMax).unwrap();
        assert_eq!(g.data(a), &[2.0]);
        assert_eq!(g.data(m), &[3.0]);
    }

    #[test]
    fn matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let (b, len, ch) = (4, 9, 5);
        let vals: Vec<f64> = (0..b * len * ch).map(|_| rng.random_range(-3.0..3.0)).collect();
        let lengths = [9, 1, 4, 7];
        let mask = SequenceMask::from_lengths(&lengths, len).unwrap();
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(&[b, len, ch], vals.clone()).unwrap());
        let a = masked_pool(&mut g, x, &mask, PoolKind::GlobalAvg).unwrap();
        let m = masked_pool(&mut g, x, &mask, PoolKind::GlobalMax).unwrap();
        for bi in 0..b {
            for c in 0..ch {
                let col: Vec<f64> = (0..lengths[bi]).map(|t| vals[(bi * len + t) * ch + c]).collect();
                let avg = col.iter().sum::<f64>() / col.len() as f64;
                let max = col.iter().cloned().fold(f64::MIN, f64::max);
                assert!((g.data(a)[bi * ch + c] - avg).abs() < 1e-6);
                assert!((g.data(m)[bi * ch + c] - max).abs() < 1e-6);
            }
        }
    }
}
