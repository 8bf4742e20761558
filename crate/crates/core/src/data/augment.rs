use rand::Rng;

use super::rng::gaussian;
use super::KeypointSequence;

/// Which augmentations run; zero disables each one.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AugmentConfig {
    /// Maximum temporal shift in frames. A positive draw drops frames from
    /// the head, a negative one from the tail.
    pub shift: usize,
    /// Standard deviation of additive per-value noise.
    pub jitter_sigma: f64,
    /// Probability of dropping each frame.
    pub frame_dropout: f64,
}

impl AugmentConfig {
    pub fn is_identity(&self) -> bool {
        self.shift == 0 && self.jitter_sigma == 0.0 && self.frame_dropout == 0.0
    }
}

/// Randomly perturbed copy of `seq`; at least one frame always survives.
pub fn augment<R: Rng + ?Sized>(seq: &KeypointSequence, rng: &mut R, cfg: &AugmentConfig) -> KeypointSequence {
    if cfg.is_identity() {
        return seq.clone();
    }
    let feat = seq.features;
    let (mut start, mut end) = (0usize, seq.frames);
    if cfg.shift > 0 {
        let s = rng.random_range(-(cfg.shift as i64)..=cfg.shift as i64);
        let cut = (s.unsigned_abs() as usize).min(seq.frames - 1);
        if s > 0 {
            start = cut;
        } else {
            end -= cut;
        }
    }
    let mut kept: Vec<usize> = (start..end).collect();
    if cfg.frame_dropout > 0.0 {
        let survivors: Vec<usize> = kept.iter().copied().filter(|_| rng.random::<f64>() >= cfg.frame_dropout).collect();
        kept = if survivors.is_empty() {
            vec![kept[rng.random_range(0..kept.len())]]
        } else {
            survivors
        };
    }
    let mut values: Vec<f32> = kept.iter().flat_map(|&t| seq.frame(t).iter().copied()).collect();
    if cfg.jitter_sigma > 0.0 {
        for v in &mut values {
            *v += (cfg.jitter_sigma * gaussian(rng)) as f32;
        }
    }
    KeypointSequence {
        frames: kept.len(),
        features: feat,
        values,
        label: seq.label,
    }
}
