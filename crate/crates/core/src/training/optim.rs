//! Rectified Adam with decoupled weight decay, wrapped by Lookahead.

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for RadamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Length of the approximated simple moving average at step `t` (1-based).
pub fn rho(t: u64, beta2: f64) -> f64 {
    let rho_inf = 2.0 / (1.0 - beta2) - 1.0;
    let b2t = beta2.powi(t as i32);
    rho_inf - 2.0 * t as f64 * b2t / (1.0 - b2t)
}

/// Variance rectification factor, or `None` while the variance estimate is
/// not yet tractable (`rho <= 4`).
pub fn rectification(t: u64, beta2: f64) -> Option<f64> {
    let rho_inf = 2.0 / (1.0 - beta2) - 1.0;
    let rho_t = rho(t, beta2);
    (rho_t > 4.0).then(|| {
        ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)).sqrt()
    })
}

/// One update of a single tensor at step `t >= 1`. `m` and `v` are the
/// moment buffers, updated in place.
#[allow(clippy::too_many_arguments)]
pub fn radam_step<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    lr: f64,
    cfg: &RadamConfig,
) -> Result<()> {
    if t == 0 {
        return Err(Error::Config("optimizer step counter starts at 1".into()));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }
    let b1 = T::from_f64_lossy(cfg.beta1);
    let b2 = T::from_f64_lossy(cfg.beta2);
    let one = T::one();
    let bc1 = T::from_f64_lossy(1.0 - cfg.beta1.powi(t as i32));
    let bc2 = T::from_f64_lossy(1.0 - cfg.beta2.powi(t as i32));
    let lr_t = T::from_f64_lossy(lr);
    let decay = T::from_f64_lossy(lr * cfg.weight_decay);
    let eps = T::from_f64_lossy(cfg.eps);
    let rect = rectification(t, cfg.beta2).map(T::from_f64_lossy);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / bc1;
        let step = match rect {
            Some(r) => r * m_hat / ((v[i] / bc2).sqrt() + eps),
            None => m_hat,
        };
        param[i] = param[i] - decay * param[i] - lr_t * step;
    }
    Ok(())
}

/// RAdam moments for every trainable parameter of a store.
#[derive(Clone, Debug)]
pub struct OptimizerState<T: Scalar> {
    pub config: RadamConfig,
    pub t: u64,
    moments: Vec<Option<(Vec<T>, Vec<T>)>>,
    lookahead: Option<Lookahead<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(store: &ParamStore<T>, config: RadamConfig, lookahead: Option<(usize, f64)>) -> Self {
        let moments = store
            .iter()
            .map(|p| p.trainable.then(|| (vec![T::zero(); p.tensor.len()], vec![T::zero(); p.tensor.len()])))
            .collect();
        Self {
            config,
            t: 0,
            moments,
            lookahead: lookahead.map(|(k, alpha)| Lookahead::new(store, k, alpha)),
        }
    }

    /// Applies one RAdam step (plus a Lookahead sync when due). `grads` is
    /// indexed like the store; missing gradients count as zero.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Option<Vec<T>>], lr: f64) -> Result<()> {
        self.t += 1;
        for (idx, slot) in self.moments.iter_mut().enumerate() {
            let Some((m, v)) = slot else { continue };
            let p = store.get_index_mut(idx);
            let zeros;
            let g = match grads.get(idx).and_then(Option::as_ref) {
                Some(g) => g.as_slice(),
                None => {
                    zeros = vec![T::zero(); p.tensor.len()];
                    &zeros
                }
            };
            radam_step(p.tensor.data_mut(), g, m, v, self.t, lr, &self.config)?;
        }
        if let Some(la) = &mut self.lookahead {
            la.step(store);
        }
        Ok(())
    }
}

/// Slow weights that every `k` fast steps move `alpha` of the way toward the
/// fast weights, after which the fast weights restart from them.
#[derive(Clone, Debug)]
pub struct Lookahead<T: Scalar> {
    pub k: usize,
    pub alpha: f64,
    counter: usize,
    slow: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Lookahead<T> {
    pub fn new(store: &ParamStore<T>, k: usize, alpha: f64) -> Self {
        Self {
            k: k.max(1),
            alpha,
            counter: 0,
            slow: store.iter().map(|p| p.trainable.then(|| p.tensor.data().to_vec())).collect(),
        }
    }

    pub fn slow(&self, idx: usize) -> Option<&[T]> {
        self.slow.get(idx).and_then(|s| s.as_deref())
    }

    /// Counts one fast step; returns true when it synced.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> bool {
        self.counter += 1;
        if !self.counter.is_multiple_of(self.k) {
            return false;
        }
        let a = T::from_f64_lossy(self.alpha);
        for (idx, slot) in self.slow.iter_mut().enumerate() {
            let Some(slow) = slot else { continue };
            let fast = store.get_index_mut(idx).tensor.data_mut();
            for (s, f) in slow.iter_mut().zip(fast.iter_mut()) {
                *s = *s + a * (*f - *s);
                *f = *s;
            }
        }
        true
    }
}

/// Running equal-weight mean of weight snapshots.
#[derive(Clone, Debug, Default)]
pub struct SwaState {
    sums: Vec<Vec<f64>>,
    count: usize,
}

impl SwaState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Adds a snapshot of every parameter of `store`.
    pub fn update<T: Scalar>(&mut self, store: &ParamStore<T>) {
        if self.count == 0 {
            self.sums = store.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
        }
        for (sum, p) in self.sums.iter_mut().zip(store.iter()) {
            sum.iter_mut().zip(p.tensor.data()).for_each(|(s, &v)| *s += v.as_f64());
        }
        self.count += 1;
    }

    /// Writes the mean of the snapshots into the trainable entries of
    /// `store`. Batch-norm statistics are left to the caller.
    pub fn finalize<T: Scalar>(&self, store: &mut ParamStore<T>) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("weight averaging finalized with no snapshots".into()));
        }
        let n = self.count as f64;
        for (sum, p) in self.sums.iter().zip(store.iter_mut()) {
            if !p.trainable {
                continue;
            }
            let shape = p.tensor.shape().to_vec();
            p.tensor = Tensor::new(&shape, sum.iter().map(|&s| T::from_f64_lossy(s / n)).collect())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::rng::stream;
    use rand::Rng;

    /// Straight transcription of the rectified update for one scalar.
    struct ScalarRadam {
        m: f64,
        v: f64,
        t: i32,
    }

    impl ScalarRadam {
        fn step(&mut self, theta: f64, g: f64, lr: f64, wd: f64) -> f64 {
            let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
            self.t += 1;
            self.m = b1 * self.m + (1.0 - b1) * g;
            self.v = b2 * self.v + (1.0 - b2) * g * g;
            let mhat = self.m / (1.0 - b1.powi(self.t));
            let rinf = 2.0 / (1.0 - b2) - 1.0;
            let rt = rinf - 2.0 * self.t as f64 * b2.powi(self.t) / (1.0 - b2.powi(self.t));
            let update = if rt > 4.0 {
                let vhat = (self.v / (1.0 - b2.powi(self.t))).sqrt();
                let r = (((rt - 4.0) * (rt - 2.0) * rinf) / ((rinf - 4.0) * (rinf - 2.0) * rt)).sqrt();
                lr * r * mhat / (vhat + eps)
            } else {
                lr * mhat
            };
            theta - lr * wd * theta - update
        }
    }

    #[test]
    fn rho_at_first_step_is_one() {
        assert!((rho(1, 0.999) - 1.0).abs() < 1e-9);
        assert!(rectification(1, 0.999).is_none());
        let first = (1..20).find(|&t| rectification(t, 0.999).is_some()).unwrap();
        assert!(rho(first, 0.999) > 4.0 && rho(first - 1, 0.999) <= 4.0);
    }

    #[test]
    fn matches_scalar_reference_on_random_traces() {
        let mut rng = stream(8, "radam-test");
        for _ in 0..100 {
            let lr = rng.random_range(1e-4..1e-1);
            let wd = rng.random_range(0.0..0.2);
            let cfg = RadamConfig {
                weight_decay: wd,
                ..Default::default()
            };
            let mut theta = [rng.random_range(-3.0f64..3.0)];
            let (mut m, mut v) = ([0.0f64], [0.0f64]);
            let mut oracle = ScalarRadam { m: 0.0, v: 0.0, t: 0 };
            let mut want = theta[0];
            for t in 1..=40u64 {
                let g = rng.random_range(-2.0..2.0) + 0.5 * theta[0];
                radam_step(&mut theta, &[g], &mut m, &mut v, t, lr, &cfg).unwrap();
                want = oracle.step(want, g, lr, wd);
                let rel = (theta[0] - want).abs() / want.abs().max(1e-300);
                assert!(rel < 1e-10, "t={t}: {} vs {want}", theta[0]);
            }
        }
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = [1.5f64, -2.0];
        let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
        for t in 1..20 {
            radam_step(&mut p, &[0.0, 0.0], &mut m, &mut v, t, 0.1, &RadamConfig::default()).unwrap();
        }
        assert_eq!(p, [1.5, -2.0]);
        assert!(radam_step(&mut p, &[f64::NAN, 0.0], &mut m, &mut v, 1, 0.1, &RadamConfig::default()).is_err());
    }

    #[test]
    fn converges_on_quadratic_bowl() {
        let target = [3.0f64, -1.0, 0.5];
        let mut p = [0.0f64; 3];
        let (mut m, mut v) = ([0.0; 3], [0.0; 3]);
        let loss = |p: &[f64]| p.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let mut prev = loss(&p);
        let mut t = 0;
        while prev > 1e-6 && t < 20_000 {
            t += 1;
            let g: Vec<f64> = p.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
            let lr = 0.05 / (1.0 + t as f64 / 500.0);
            radam_step(&mut p, &g, &mut m, &mut v, t, lr, &RadamConfig::default()).unwrap();
            prev = loss(&p);
        }
        assert!(prev < 1e-6, "loss {prev} after {t} steps");
    }

    fn store(v: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::from_f64(&[v.len()], v).unwrap(), true).unwrap();
        s
    }

    #[test]
    fn lookahead_sync_arithmetic() {
        let mut s = store(&[0.0]);
        let mut la = Lookahead::new(&s, 1, 0.5);
        s.get_index_mut(0).tensor.data_mut()[0] = 2.0;
        assert!(la.step(&mut s));
        assert_eq!(s.get("w").unwrap().data(), &[1.0]);
        assert_eq!(la.slow(0).unwrap(), &[1.0]);
    }

    #[test]
    fn lookahead_alpha_one_is_identity() {
        let mut s = store(&[0.0, 1.0]);
        let mut la = Lookahead::new(&s, 3, 1.0);
        for i in 0..9 {
            s.get_index_mut(0).tensor.data_mut()[0] += 0.25 * i as f64;
            let before = s.get("w").unwrap().clone();
            la.step(&mut s);
            assert_eq!(s.get("w").unwrap(), &before);
        }
    }

    #[test]
    fn lookahead_tracks_exponential_average() {
        let mut s = store(&[0.0]);
        let mut la = Lookahead::new(&s, 1, 0.5);
        let (mut fast, mut slow) = (0.0f64, 0.0f64);
        for _ in 0..20 {
            fast += 1.0;
            s.get_index_mut(0).tensor.data_mut()[0] += 1.0;
            la.step(&mut s);
            slow += 0.5 * (fast - slow);
            fast = slow;
            assert!((s.get("w").unwrap().data()[0] - slow).abs() < 1e-12);
        }
    }

    #[test]
    fn swa_means() {
        let mut swa = SwaState::new();
        let mut target = store(&[9.0]);
        assert!(swa.finalize(&mut target).is_err());
        swa.update(&store(&[0.0]));
        swa.update(&store(&[2.0]));
        swa.finalize(&mut target).unwrap();
        assert_eq!(target.get("w").unwrap().data(), &[1.0]);

        let mut rng = stream(1, "swa");
        let snaps: Vec<Vec<f64>> = (0..3).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mut swa = SwaState::new();
        snaps.iter().for_each(|s| swa.update(&store(s)));
        let mut out = store(&[0.0; 5]);
        swa.finalize(&mut out).unwrap();
        for j in 0..5 {
            let want = (snaps[0][j] + snaps[1][j] + snaps[2][j]) / 3.0;
            assert!((out.get("w").unwrap().data()[j] - want).abs() < 1e-7);
        }
    }
}
