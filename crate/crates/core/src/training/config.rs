use std::path::PathBuf;
use std::str::FromStr;

use super::schedule::{DecayType, Schedule};
use crate::data::{AugmentConfig, NormScheme};
use crate::error::{Error, Result};
use crate::models::Arch;

/// When to end training before the epoch budget runs out.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum EarlyStopPolicy {
    Off,
    /// Stop once `val_loss` has gone `patience` epochs without improving on
    /// the best value by more than `min_delta`.
    ValLoss { patience: usize, min_delta: f64 },
    /// Stop as soon as `train_loss > val_loss`.
    TrainAboveVal,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub decay: DecayType,
    pub seed: u64,
    /// Weight averaging covers epochs from `floor(epochs * fraction)` on;
    /// `None` disables it.
    pub swa_start_fraction: Option<f64>,
    pub early_stop: EarlyStopPolicy,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lookahead_k: usize,
    pub lookahead_alpha: f64,
    pub augment: AugmentConfig,
    pub norm: NormScheme,
    /// End training once validation accuracy reaches this value.
    pub target_val_acc: Option<f64>,
    pub checkpoint_path: Option<PathBuf>,
    pub log_path: Option<PathBuf>,
}

impl TrainConfig {
    pub fn for_arch(arch: Arch) -> Self {
        let (epochs, decay) = match arch {
            Arch::Lstm => (200, DecayType::Cosine),
            Arch::CnnTrans => (150, DecayType::OneCycle),
        };
        Self {
            epochs,
            batch_size: 64,
            lr_start: 5e-5,
            lr_min: 1e-6,
            weight_decay: 0.1,
            decay,
            seed: 42,
            swa_start_fraction: Some(0.75),
            early_stop: EarlyStopPolicy::ValLoss {
                patience: 10,
                min_delta: 0.0,
            },
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lookahead_k: 5,
            lookahead_alpha: 0.5,
            augment: AugmentConfig::default(),
            norm: NormScheme::PerFeatureZscore,
            target_val_acc: None,
            checkpoint_path: None,
            log_path: None,
        }
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            decay: self.decay,
            lr_start: self.lr_start,
            lr_min: self.lr_min,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if !(self.lr_min < self.lr_start) || self.lr_min < 0.0 {
            return Err(Error::Config(format!(
                "need 0 <= lr_min < lr_start, got {} and {}",
                self.lr_min, self.lr_start
            )));
        }
        if let Some(f) = self.swa_start_fraction {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::Config(format!("swa_start_fraction {f} outside [0, 1)")));
            }
        }
        if self.lookahead_k == 0 || !(0.0..=1.0).contains(&self.lookahead_alpha) {
            return Err(Error::Config("lookahead_k must be >= 1 and lookahead_alpha in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.augment.frame_dropout) || self.augment.jitter_sigma < 0.0 {
            return Err(Error::Config("augmentation settings out of range".into()));
        }
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<V: FromStr>(key: &str, value: &str) -> Result<V> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
        }
        let value = value.trim();
        let off = |v: &str| matches!(v, "none" | "off" | "");
        match key {
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "lr_start" => self.lr_start = num(key, value)?,
            "lr_min" => self.lr_min = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "decay_type" => self.decay = value.parse()?,
            "seed" => self.seed = num(key, value)?,
            "swa_start_fraction" => {
                self.swa_start_fraction = if off(value) { None } else { Some(num(key, value)?) }
            }
            "early_stop" => {
                self.early_stop = match value {
                    "off" | "none" => EarlyStopPolicy::Off,
                    "val_loss" => match self.early_stop {
                        p @ EarlyStopPolicy::ValLoss { .. } => p,
                        _ => EarlyStopPolicy::ValLoss {
                            patience: 10,
                            min_delta: 0.0,
                        },
                    },
                    "train_above_val" => EarlyStopPolicy::TrainAboveVal,
                    other => return Err(Error::Config(format!("unknown early_stop policy `{other}`"))),
                }
            }
            "patience" | "min_delta" => {
                let (mut patience, mut min_delta) = match self.early_stop {
                    EarlyStopPolicy::ValLoss { patience, min_delta } => (patience, min_delta),
                    _ => (10, 0.0),
                };
                if key == "patience" {
                    patience = num(key, value)?;
                } else {
                    min_delta = num(key, value)?;
                }
                self.early_stop = EarlyStopPolicy::ValLoss { patience, min_delta };
            }
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "eps" => self.eps = num(key, value)?,
            "lookahead_k" => self.lookahead_k = num(key, value)?,
            "lookahead_alpha" => self.lookahead_alpha = num(key, value)?,
            "augment_shift" => self.augment.shift = num(key, value)?,
            "augment_jitter" => self.augment.jitter_sigma = num(key, value)?,
            "augment_frame_dropout" => self.augment.frame_dropout = num(key, value)?,
            "norm" => self.norm = value.parse()?,
            "target_val_acc" => self.target_val_acc = if off(value) { None } else { Some(num(key, value)?) },
            "checkpoint_path" => self.checkpoint_path = (!off(value)).then(|| PathBuf::from(value)),
            "log_path" => self.log_path = (!off(value)).then(|| PathBuf::from(value)),
            other => return Err(Error::Config(format!("unknown training setting `{other}`"))),
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("none".to_string(), |v| v.to_string());
        let path = |p: &Option<PathBuf>| p.as_ref().map_or("none".to_string(), |p| p.display().to_string());
        let mut lines = vec![
            format!("epochs={}", self.epochs),
            format!("batch_size={}", self.batch_size),
            format!("lr_start={}", self.lr_start),
            format!("lr_min={}", self.lr_min),
            format!("weight_decay={}", self.weight_decay),
            format!("decay_type={}", self.decay),
            format!("seed={}", self.seed),
            format!("swa_start_fraction={}", opt(self.swa_start_fraction)),
        ];
        match self.early_stop {
            EarlyStopPolicy::Off => lines.push("early_stop=off".into()),
            EarlyStopPolicy::TrainAboveVal => lines.push("early_stop=train_above_val".into()),
            EarlyStopPolicy::ValLoss { patience, min_delta } => {
                lines.push("early_stop=val_loss".into());
                lines.push(format!("patience={patience}"));
                lines.push(format!("min_delta={min_delta}"));
            }
        }
        lines.extend([
            format!("beta1={}", self.beta1),
            format!("beta2={}", self.beta2),
            format!("eps={}", self.eps),
            format!("lookahead_k={}", self.lookahead_k),
            format!("lookahead_alpha={}", self.lookahead_alpha),
            format!("augment_shift={}", self.augment.shift),
            format!("augment_jitter={}", self.augment.jitter_sigma),
            format!("augment_frame_dropout={}", self.augment.frame_dropout),
            format!(
                "norm={}",
                match self.norm {
                    NormScheme::PerFeatureZscore => "zscore",
                    NormScheme::None => "none",
                }
            ),
            format!("target_val_acc={}", opt(self.target_val_acc)),
            format!("checkpoint_path={}", path(&self.checkpoint_path)),
            format!("log_path={}", path(&self.log_path)),
        ]);
        lines.iter().map(|l| format!("{l}\n")).collect()
    }
}
