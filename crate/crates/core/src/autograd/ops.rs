use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::mask::SequenceMask;
use crate::tensor::{Scalar, Tensor};

fn unary<T: Scalar>(g: &mut Graph<T>, x: Var, f: impl Fn(T) -> T, df: fn(T, T) -> T) -> Var {
    let xv = g.value(x);
    let out: Vec<T> = xv.data().iter().map(|&v| f(v)).collect();
    let value = Tensor::new(xv.shape(), out).expect("same shape");
    let y = Var(g.len());
    g.push(
        value,
        &[x],
        Box::new(move |ctx, gy| {
            let xd = ctx.value(x).data();
            let yd = ctx.value(y).data();
            let gx = ctx.grad_mut(x);
            for i in 0..gy.len() {
                gx[i] = gx[i] + gy[i] * df(xd[i], yd[i]);
            }
        }),
    )
}

impl<T: Scalar> Graph<T> {
    /// `x[.., in] @ w[in, out] + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || xs.is_empty() || *xs.last().unwrap() != ws[0] {
            return Err(Error::shape("dense", &xs, &ws));
        }
        let (din, dout) = (ws[0], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                return Err(Error::shape("dense bias", self.shape(b), &[dout]));
            }
        }
        let rows = self.value(x).len() / din;
        let mut out = vec![T::zero(); rows * dout];
        if let Some(b) = b {
            let bd = self.data(b);
            for r in 0..rows {
                out[r * dout..(r + 1) * dout].copy_from_slice(bd);
            }
        }
        T::gemm(rows, din, dout, self.data(x), false, self.data(w), false, &mut out, b.is_some());
        let mut oshape = xs.clone();
        *oshape.last_mut().unwrap() = dout;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push(
            Tensor::new(&oshape, out)?,
            &parents,
            Box::new(move |ctx, gy| {
                if ctx.wants(x) {
                    let (gx, wv) = ctx.grad_and_value(x, w);
                    T::gemm(rows, dout, din, gy, false, wv.data(), true, gx, true);
                }
                if ctx.wants(w) {
                    let (gw, xv) = ctx.grad_and_value(w, x);
                    T::gemm(din, rows, dout, xv.data(), true, gy, false, gw, true);
                }
                if let Some(b) = b {
                    if ctx.wants(b) {
                        let gb = ctx.grad_mut(b);
                        for r in 0..rows {
                            for (o, acc) in gb.iter_mut().enumerate() {
                                *acc = *acc + gy[r * dout + o];
                            }
                        }
                    }
                }
            }),
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add", self.shape(a), self.shape(b)));
        }
        let out: Vec<T> = self.data(a).iter().zip(self.data(b)).map(|(&p, &q)| p + q).collect();
        let value = Tensor::new(self.shape(a), out)?;
        Ok(self.push(
            value,
            &[a, b],
            Box::new(move |ctx, gy| {
                ctx.accumulate(a, gy);
                ctx.accumulate(b, gy);
            }),
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("mul", self.shape(a), self.shape(b)));
        }
        let out: Vec<T> = self.data(a).iter().zip(self.data(b)).map(|(&p, &q)| p * q).collect();
        let value = Tensor::new(self.shape(a), out)?;
        Ok(self.push(
            value,
            &[a, b],
            Box::new(move |ctx, gy| {
                if ctx.wants(a) {
                    let (ga, bv) = ctx.grad_and_value(a, b);
                    for ((g, &d), &o) in ga.iter_mut().zip(gy).zip(bv.data()) {
                        *g = *g + d * o;
                    }
                }
                if ctx.wants(b) {
                    let (gb, av) = ctx.grad_and_value(b, a);
                    for ((g, &d), &o) in gb.iter_mut().zip(gy).zip(av.data()) {
                        *g = *g + d * o;
                    }
                }
            }),
        ))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let value = Tensor::new(self.shape(x), self.data(x).iter().map(|&v| v * s).collect()).unwrap();
        self.push(
            value,
            &[x],
            Box::new(move |ctx, gy| {
                let gx = ctx.grad_mut(x);
                for (g, &d) in gx.iter_mut().zip(gy) {
                    *g = *g + d * s;
                }
            }),
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        unary(self, x, |v| v.max(T::zero()), |x, _| if x > T::zero() { T::one() } else { T::zero() })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        unary(self, x, sigmoid, |_, y| y * (T::one() - y))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        unary(self, x, |v| v.tanh(), |_, y| T::one() - y * y)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let width = *shape.last().ok_or_else(|| Error::shape("softmax", &shape, &[1]))?;
        if width == 0 {
            return Err(Error::shape("softmax", &shape, &[1]));
        }
        let mut out = self.data(x).to_vec();
        out.chunks_mut(width).for_each(softmax_row);
        let y = Var(self.len());
        Ok(self.push(
            Tensor::new(&shape, out)?,
            &[x],
            Box::new(move |ctx, gy| {
                let yd = ctx.value(y).data();
                let gx = ctx.grad_mut(x);
                for ((gxr, yr), gyr) in gx.chunks_mut(width).zip(yd.chunks(width)).zip(gy.chunks(width)) {
                    let dot: T = yr.iter().zip(gyr).map(|(&a, &b)| a * b).sum();
                    for i in 0..width {
                        gxr[i] = gxr[i] + yr[i] * (gyr[i] - dot);
                    }
                }
            }),
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, &[x], Box::new(move |ctx, gy| ctx.accumulate(x, gy))))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.data(x).iter().copied().sum();
        self.push(
            Tensor::scalar(s),
            &[x],
            Box::new(move |ctx, gy| {
                let g0 = gy[0];
                ctx.grad_mut(x).iter_mut().for_each(|g| *g = *g + g0);
            }),
        )
    }

    /// `sum_i weights[i] * x[i]`.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<T>) -> Result<Var> {
        if weights.len() != self.value(x).len() {
            return Err(Error::shape("weighted_sum", self.shape(x), &[weights.len()]));
        }
        let s: T = self.data(x).iter().zip(&weights).map(|(&a, &b)| a * b).sum();
        Ok(self.push(
            Tensor::scalar(s),
            &[x],
            Box::new(move |ctx, gy| {
                let g0 = gy[0];
                let gx = ctx.grad_mut(x);
                for (g, &w) in gx.iter_mut().zip(&weights) {
                    *g = *g + g0 * w;
                }
            }),
        ))
    }

    /// Zeroes padded positions of a `[batch, seq, ch]` value.
    pub fn apply_mask(&mut self, x: Var, mask: &SequenceMask) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        check_bsc("apply_mask", &shape, mask)?;
        let ch = shape[2];
        let valid = mask.valid().to_vec();
        let mut out = self.data(x).to_vec();
        for (pos, &ok) in valid.iter().enumerate() {
            if !ok {
                out[pos * ch..(pos + 1) * ch].iter_mut().for_each(|v| *v = T::zero());
            }
        }
        Ok(self.push(
            Tensor::new(&shape, out)?,
            &[x],
            Box::new(move |ctx, gy| {
                let gx = ctx.grad_mut(x);
                for (pos, &ok) in valid.iter().enumerate() {
                    if ok {
                        for c in pos * ch..(pos + 1) * ch {
                            gx[c] = gx[c] + gy[c];
                        }
                    }
                }
            }),
        ))
    }

    /// `[batch, seq, heads * dh]` to `[batch, heads, seq, dh]`.
    pub fn split_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || heads == 0 || !s[2].is_multiple_of(heads) {
            return Err(Error::Config(format!("model width {:?} not divisible by {heads} heads", s.get(2))));
        }
        let (b, t, d) = (s[0], s[1], s[2]);
        let dh = d / heads;
        let src = self.data(x);
        let mut out = vec![T::zero(); src.len()];
        permute_heads(src, &mut out, b, t, heads, dh, false);
        Ok(self.push(
            Tensor::new(&[b, heads, t, dh], out)?,
            &[x],
            Box::new(move |ctx, gy| {
                let mut tmp = vec![T::zero(); gy.len()];
                permute_heads(gy, &mut tmp, b, t, heads, dh, true);
                ctx.accumulate(x, &tmp);
            }),
        ))
    }

    /// Inverse of [`Graph::split_heads`].
    pub fn merge_heads(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::shape("merge_heads", &s, &[0, 0, 0, 0]));
        }
        let (b, heads, t, dh) = (s[0], s[1], s[2], s[3]);
        let src = self.data(x);
        let mut out = vec![T::zero(); src.len()];
        permute_heads(src, &mut out, b, t, heads, dh, true);
        Ok(self.push(
            Tensor::new(&[b, t, heads * dh], out)?,
            &[x],
            Box::new(move |ctx, gy| {
                let mut tmp = vec![T::zero(); gy.len()];
                permute_heads(gy, &mut tmp, b, t, heads, dh, false);
                ctx.accumulate(x, &tmp);
            }),
        ))
    }

    /// Batched product over leading axes: `a[.., m, k] @ b[.., k, n]`, or
    /// `a @ b^T` with `b[.., n, k]` when `trans_b`.
    pub fn batched_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sa.len() != sb.len() || sa[..sa.len() - 2] != sb[..sb.len() - 2] {
            return Err(Error::shape("batched_matmul", &sa, &sb));
        }
        let r = sa.len();
        let (m, k) = (sa[r - 2], sa[r - 1]);
        let (kb, n) = if trans_b { (sb[r - 1], sb[r - 2]) } else { (sb[r - 2], sb[r - 1]) };
        if k != kb {
            return Err(Error::shape("batched_matmul", &sa, &sb));
        }
        let batch: usize = sa[..r - 2].iter().product();
        let mut out = vec![T::zero(); batch * m * n];
        {
            let (ad, bd) = (self.data(a), self.data(b));
            for i in 0..batch {
                T::gemm(
                    m,
                    k,
                    n,
                    &ad[i * m * k..(i + 1) * m * k],
                    false,
                    &bd[i * k * n..(i + 1) * k * n],
                    trans_b,
                    &mut out[i * m * n..(i + 1) * m * n],
                    false,
                );
            }
        }
        let mut oshape = sa[..r - 2].to_vec();
        oshape.extend([m, n]);
        Ok(self.push(
            Tensor::new(&oshape, out)?,
            &[a, b],
            Box::new(move |ctx, gy| {
                if ctx.wants(a) {
                    // da = gy @ op(b)^T
                    let (ga, bv) = ctx.grad_and_value(a, b);
                    for i in 0..batch {
                        T::gemm(
                            m,
                            n,
                            k,
                            &gy[i * m * n..(i + 1) * m * n],
                            false,
                            &bv.data()[i * k * n..(i + 1) * k * n],
                            !trans_b,
                            &mut ga[i * m * k..(i + 1) * m * k],
                            true,
                        );
                    }
                }
                if ctx.wants(b) {
                    let (gb, av) = ctx.grad_and_value(b, a);
                    for i in 0..batch {
                        let ai = &av.data()[i * m * k..(i + 1) * m * k];
                        let gyi = &gy[i * m * n..(i + 1) * m * n];
                        let gbi = &mut gb[i * k * n..(i + 1) * k * n];
                        if trans_b {
                            // db[n, k] = gy^T @ a
                            T::gemm(n, m, k, gyi, true, ai, false, gbi, true);
                        } else {
                            // db[k, n] = a^T @ gy
                            T::gemm(k, m, n, ai, true, gyi, false, gbi, true);
                        }
                    }
                }
            }),
        ))
    }

    /// Adds `-1e9` to attention logits `[batch, heads, q, k]` at padded key
    /// positions.
    pub fn mask_keys(&mut self, logits: Var, mask: &SequenceMask) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 4 || s[0] != mask.batch() || s[3] != mask.max_len() {
            return Err(Error::shape("mask_keys", &s, &[mask.batch(), mask.max_len()]));
        }
        let (b, h, q, k) = (s[0], s[1], s[2], s[3]);
        let neg = T::from_f64_lossy(-1e9);
        let mut out = self.data(logits).to_vec();
        for bi in 0..b {
            let row_mask = &mask.valid()[bi * k..(bi + 1) * k];
            for row in out[bi * h * q * k..(bi + 1) * h * q * k].chunks_mut(k) {
                for (v, &ok) in row.iter_mut().zip(row_mask) {
                    if !ok {
                        *v = *v + neg;
                    }
                }
            }
        }
        Ok(self.push(Tensor::new(&s, out)?, &[logits], Box::new(move |ctx, gy| ctx.accumulate(logits, gy))))
    }

    /// `x[b, t, c] * s[b, c]`, broadcasting the scale over the sequence axis.
    pub fn scale_channels(&mut self, x: Var, s: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ss = self.shape(s).to_vec();
        if xs.len() != 3 || ss != [xs[0], xs[2]] {
            return Err(Error::shape("scale_channels", &xs, &ss));
        }
        let (b, t, c) = (xs[0], xs[1], xs[2]);
        let mut out = self.data(x).to_vec();
        let sd = self.data(s);
        for bi in 0..b {
            for ti in 0..t {
                let row = &mut out[(bi * t + ti) * c..(bi * t + ti + 1) * c];
                row.iter_mut().zip(&sd[bi * c..(bi + 1) * c]).for_each(|(v, &k)| *v = *v * k);
            }
        }
        Ok(self.push(
            Tensor::new(&xs, out)?,
            &[x, s],
            Box::new(move |ctx, gy| {
                if ctx.wants(x) {
                    let (gx, sv) = ctx.grad_and_value(x, s);
                    for bi in 0..b {
                        for ti in 0..t {
                            let o = (bi * t + ti) * c;
                            for ci in 0..c {
                                gx[o + ci] = gx[o + ci] + gy[o + ci] * sv.data()[bi * c + ci];
                            }
                        }
                    }
                }
                if ctx.wants(s) {
                    let (gs, xv) = ctx.grad_and_value(s, x);
                    for bi in 0..b {
                        for ti in 0..t {
                            let o = (bi * t + ti) * c;
                            for ci in 0..c {
                                gs[bi * c + ci] = gs[bi * c + ci] + gy[o + ci] * xv.data()[o + ci];
                            }
                        }
                    }
                }
            }),
        ))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`, computed with a
    /// fused, max-shifted log-softmax.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::shape("cross_entropy", &s, &[labels.len()]));
        }
        let (b, c) = (s[0], s[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::InvalidLabel {
                label: bad,
                num_classes: c,
            });
        }
        let mut probs = self.data(logits).to_vec();
        let mut loss = T::zero();
        for (row, &l) in probs.chunks_mut(c).zip(labels) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            loss = loss + (lse - row[l]);
            row.iter_mut().for_each(|v| *v = (*v - lse).exp());
        }
        let inv_b = T::one() / T::from_usize(b).unwrap();
        let labels = labels.to_vec();
        Ok(self.push(
            Tensor::scalar(loss * inv_b),
            &[logits],
            Box::new(move |ctx, gy| {
                let scale = gy[0] * inv_b;
                let gl = ctx.grad_mut(logits);
                for (i, &l) in labels.iter().enumerate() {
                    for j in 0..c {
                        let onehot = if j == l { T::one() } else { T::zero() };
                        gl[i * c + j] = gl[i * c + j] + scale * (probs[i * c + j] - onehot);
                    }
                }
            }),
        ))
    }
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_row<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    row.iter_mut().for_each(|v| *v = *v / total);
}

fn permute_heads<T: Scalar>(src: &[T], dst: &mut [T], b: usize, t: usize, h: usize, dh: usize, inverse: bool) {
    for bi in 0..b {
        for ti in 0..t {
            for hi in 0..h {
                let btd = ((bi * t + ti) * h + hi) * dh;
                let bht = ((bi * h + hi) * t + ti) * dh;
                let (from, to) = if inverse { (bht, btd) } else { (btd, bht) };
                dst[to..to + dh].copy_from_slice(&src[from..from + dh]);
            }
        }
    }
}

pub(crate) fn check_bsc(op: &'static str, shape: &[usize], mask: &SequenceMask) -> Result<()> {
    if shape.len() != 3 || shape[0] != mask.batch() || shape[1] != mask.max_len() {
        return Err(Error::shape(op, shape, &[mask.batch(), mask.max_len()]));
    }
    Ok(())
}
