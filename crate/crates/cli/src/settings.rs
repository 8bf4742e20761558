use std::path::Path;

use anyhow::{bail, Context, Result};
use signseq::models::ModelConfig;
use signseq::training::TrainConfig;

pub const THREADS_VAR: &str = "SIGNSEQ_THREADS";
pub const DEFAULT_VAL_FRACTION: f64 = 0.2;

/// Worker threads allowed by `SIGNSEQ_THREADS` (default 1).
pub fn threads() -> Result<usize> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => bail!("{THREADS_VAR} must be a positive integer, got `{v}`"),
        },
    }
}

/// Everything `train` needs, assembled from defaults, a settings file and
/// flags, in that order of precedence.
pub struct RunSettings {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub val_fraction: f64,
    /// Keys set explicitly by the file or flags.
    pub explicit: Vec<String>,
}

impl RunSettings {
    pub fn new(model: ModelConfig, train: TrainConfig) -> Self {
        Self {
            model,
            train,
            val_fraction: DEFAULT_VAL_FRACTION,
            explicit: Vec::new(),
        }
    }

    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        if key == "val_fraction" {
            self.val_fraction = value.trim().parse().with_context(|| format!("invalid val_fraction `{value}`"))?;
        } else if key == "arch" {
            bail!("`arch` is chosen with --arch");
        } else if ModelConfig::KEYS.contains(&key) {
            self.model.set(key, value)?;
        } else {
            self.train.set(key, value)?;
        }
        self.explicit.push(key.to_string());
        Ok(())
    }

    pub fn apply_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .with_context(|| format!("expected KEY=VALUE, got `{pair}`"))?;
        self.apply(k, v)
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            self.apply_pair(line)
                .with_context(|| format!("{}:{}", path.display(), n + 1))?;
        }
        Ok(())
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.iter().any(|k| k == key)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            bail!("val_fraction must be in (0, 1), got {}", self.val_fraction);
        }
        Ok(())
    }

    /// The effective configuration as key=value lines.
    pub fn render(&self) -> String {
        format!(
            "# model\n{}# training\n{}val_fraction={}\n",
            self.model.to_kv(),
            self.train.to_kv(),
            self.val_fraction
        )
    }
}
