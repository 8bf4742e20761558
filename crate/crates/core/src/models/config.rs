use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Lstm,
    #[serde(rename = "cnntrans")]
    CnnTrans,
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Lstm => "lstm",
            Arch::CnnTrans => "cnntrans",
        })
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm" => Ok(Arch::Lstm),
            "cnntrans" => Ok(Arch::CnnTrans),
            other => Err(Error::Config(format!("unknown architecture `{other}` (expected lstm or cnntrans)"))),
        }
    }
}

/// Architecture hyperparameters. `seq_len` is the fixed input length for the
/// LSTM (its head flattens over time) and the maximum length for cnntrans.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub seq_len: usize,
    pub features: usize,
    pub num_classes: usize,
    pub lstm_units: usize,
    pub head_hidden: usize,
    pub dropout: f64,
    pub conv_blocks: usize,
    pub transformer_blocks: usize,
    pub d_model: usize,
    pub heads: usize,
    pub expand_ratio: usize,
    /// `None` means `2 * d_model`.
    pub ffn_hidden: Option<usize>,
    pub k_eca: usize,
    pub conv_kernel: usize,
}

impl ModelConfig {
    pub fn new(arch: Arch, features: usize, num_classes: usize) -> Self {
        Self {
            arch,
            seq_len: match arch {
                Arch::Lstm => 45,
                Arch::CnnTrans => 384,
            },
            features,
            num_classes,
            lstm_units: 128,
            head_hidden: 256,
            dropout: 0.5,
            conv_blocks: 3,
            transformer_blocks: 1,
            d_model: 192,
            heads: 4,
            expand_ratio: 2,
            ffn_hidden: None,
            k_eca: 5,
            conv_kernel: 5,
        }
    }

    pub fn ffn_width(&self) -> usize {
        self.ffn_hidden.unwrap_or(2 * self.d_model)
    }

    pub fn expanded(&self) -> usize {
        self.expand_ratio * self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("seq_len", self.seq_len),
            ("features", self.features),
            ("num_classes", self.num_classes),
            ("lstm_units", self.lstm_units),
            ("head_hidden", self.head_hidden),
            ("conv_blocks", self.conv_blocks),
            ("transformer_blocks", self.transformer_blocks),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("expand_ratio", self.expand_ratio),
            ("ffn_hidden", self.ffn_width()),
            ("k_eca", self.k_eca),
            ("conv_kernel", self.conv_kernel),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.k_eca.is_multiple_of(2) || self.conv_kernel.is_multiple_of(2) {
            return Err(Error::Config("k_eca and conv_kernel must be odd".into()));
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
        match key {
            "arch" => self.arch = value.trim().parse()?,
            "seq_len" => self.seq_len = num(key, value)?,
            "features" => self.features = num(key, value)?,
            "num_classes" => self.num_classes = num(key, value)?,
            "lstm_units" => self.lstm_units = num(key, value)?,
            "head_hidden" => self.head_hidden = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "conv_blocks" => self.conv_blocks = num(key, value)?,
            "transformer_blocks" => self.transformer_blocks = num(key, value)?,
            "d_model" => self.d_model = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "expand_ratio" => self.expand_ratio = num(key, value)?,
            "ffn_hidden" => self.ffn_hidden = Some(num(key, value)?),
            "k_eca" => self.k_eca = num(key, value)?,
            "conv_kernel" => self.conv_kernel = num(key, value)?,
            other => return Err(Error::Config(format!("unknown model setting `{other}`"))),
        }
        Ok(())
    }

    pub const KEYS: [&'static str; 15] = [
        "arch",
        "seq_len",
        "features",
        "num_classes",
        "lstm_units",
        "head_hidden",
        "dropout",
        "conv_blocks",
        "transformer_blocks",
        "d_model",
        "heads",
        "expand_ratio",
        "ffn_hidden",
        "k_eca",
        "conv_kernel",
    ];

    /// Every setting as `key=value` lines, readable by
    /// [`ModelConfig::from_kv`]. An unset `ffn_hidden` is omitted.
    pub fn to_kv(&self) -> String {
        let pairs: [(&str, String); 15] = [
            ("arch", self.arch.to_string()),
            ("seq_len", self.seq_len.to_string()),
            ("features", self.features.to_string()),
            ("num_classes", self.num_classes.to_string()),
            ("lstm_units", self.lstm_units.to_string()),
            ("head_hidden", self.head_hidden.to_string()),
            ("dropout", self.dropout.to_string()),
            ("conv_blocks", self.conv_blocks.to_string()),
            ("transformer_blocks", self.transformer_blocks.to_string()),
            ("d_model", self.d_model.to_string()),
            ("heads", self.heads.to_string()),
            ("expand_ratio", self.expand_ratio.to_string()),
            ("ffn_hidden", self.ffn_hidden.map_or(String::new(), |v| v.to_string())),
            ("k_eca", self.k_eca.to_string()),
            ("conv_kernel", self.conv_kernel.to_string()),
        ];
        pairs
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got `{line}`")))?;
            pairs.push((k.trim(), v.trim()));
        }
        let arch = pairs
            .iter()
            .find(|(k, _)| *k == "arch")
            .ok_or_else(|| Error::Config("model config lacks `arch`".into()))?
            .1
            .parse()?;
        let mut cfg = ModelConfig::new(arch, 1, 1);
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Trainable parameter count implied by the configuration.
    pub fn param_count(&self) -> usize {
        let (f, c) = (self.features, self.num_classes);
        match self.arch {
            Arch::Lstm => {
                let u = self.lstm_units;
                let h = self.head_hidden;
                f * 4 * u + u * 4 * u + 4 * u + self.seq_len * u * h + h + h * c + c
            }
            Arch::CnnTrans => {
                let d = self.d_model;
                let e = self.expanded();
                let k = self.conv_kernel;
                let fh = self.ffn_width();
                let conv = d * e + e + k * e + 2 * e + self.k_eca + e * d + d;
                let tf = 2 * d + 4 * d * d + 2 * d + (d * fh + fh + fh * d + d);
                f * d + d + self.conv_blocks * conv + self.transformer_blocks * tf + d * c + c
            }
        }
    }
}
