use std::str::FromStr;

use super::{Dataset, KeypointSequence};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum NormScheme {
    PerFeatureZscore,
    None,
}

impl FromStr for NormScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zscore" | "per-feature-zscore" => Ok(Self::PerFeatureZscore),
            "none" => Ok(Self::None),
            other => Err(Error::Config(format!("unknown normalization `{other}`"))),
        }
    }
}

/// Per-feature mean and standard deviation over every frame of a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-6;

impl FeatureStats {
    /// Fits on `train` only; callers apply the result to other splits.
    pub fn fit(train: &Dataset) -> Result<Self> {
        let features = train
            .features()
            .ok_or_else(|| Error::Data("cannot fit normalization on an empty dataset".into()))?;
        let mut sum = vec![0.0f64; features];
        let mut count = 0usize;
        for s in &train.samples {
            for t in 0..s.frames {
                sum.iter_mut().zip(s.frame(t)).for_each(|(a, &v)| *a += v as f64);
            }
            count += s.frames;
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0f64; features];
        for s in &train.samples {
            for t in 0..s.frames {
                for (f, &v) in s.frame(t).iter().enumerate() {
                    let d = v as f64 - mean[f];
                    sq[f] += d * d;
                }
            }
        }
        let std = sq.iter().map(|s| (s / count as f64).sqrt()).collect();
        Ok(Self { mean, std })
    }

    pub fn identity(features: usize) -> Self {
        Self {
            mean: vec![0.0; features],
            std: vec![1.0; features],
        }
    }
}

/// `(x - mean_f) / max(std_f, 1e-6)` per feature, or the identity.
pub fn normalize(seq: &KeypointSequence, scheme: NormScheme, stats: &FeatureStats) -> Result<KeypointSequence> {
    match scheme {
        NormScheme::None => Ok(seq.clone()),
        NormScheme::PerFeatureZscore => {
            if stats.mean.len() != seq.features || stats.std.len() != seq.features {
                return Err(Error::Data(format!(
                    "normalization stats cover {} features, sequence has {}",
                    stats.mean.len(),
                    seq.features
                )));
            }
            let mut out = seq.clone();
            for (i, v) in out.values.iter_mut().enumerate() {
                let f = i % seq.features;
                *v = ((*v as f64 - stats.mean[f]) / stats.std[f].max(STD_FLOOR)) as f32;
            }
            Ok(out)
        }
    }
}

pub fn normalize_dataset(ds: &Dataset, scheme: NormScheme, stats: &FeatureStats) -> Result<Dataset> {
    Ok(Dataset {
        class_names: ds.class_names.clone(),
        samples: ds
            .samples
            .iter()
            .map(|s| normalize(s, scheme, stats))
            .collect::<Result<_>>()?,
    })
}
