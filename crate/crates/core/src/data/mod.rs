//! Keypoint-sequence datasets: in-memory model, on-disk formats, splits,
//! normalization, padding, augmentation and the synthetic generator.

pub mod augment;
pub mod batch;
pub mod io;
pub mod normalize;
pub mod rng;
pub mod split;
pub mod synth;

pub use augment::{augment, AugmentConfig};
pub use batch::{pad_and_mask, PaddedBatch};
pub use io::{load_dataset, write_dataset};
pub use normalize::{normalize, FeatureStats, NormScheme};
pub use split::{kfold_split, split_train_val};
pub use synth::{synth_generate, SynthConfig};

use crate::error::{Error, Result};

/// One gesture clip: `frames x features` values, frame-major.
#[derive(Clone, Debug, PartialEq)]
pub struct KeypointSequence {
    pub frames: usize,
    pub features: usize,
    pub values: Vec<f32>,
    pub label: usize,
}

impl KeypointSequence {
    pub fn new(frames: usize, features: usize, values: Vec<f32>, label: usize) -> Result<Self> {
        if frames == 0 || features == 0 {
            return Err(Error::Data(format!("empty sequence ({frames} x {features})")));
        }
        if values.len() != frames * features {
            return Err(Error::Data(format!(
                "sequence holds {} values, expected {frames} x {features}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("keypoint sequence".into()));
        }
        Ok(Self {
            frames,
            features,
            values,
            label,
        })
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.values[t * self.features..(t + 1) * self.features]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub samples: Vec<KeypointSequence>,
}

impl Dataset {
    pub fn new(class_names: Vec<String>, samples: Vec<KeypointSequence>) -> Result<Self> {
        let ds = Self { class_names, samples };
        ds.validate()?;
        Ok(ds)
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Feature width shared by every sample, if any sample exists.
    pub fn features(&self) -> Option<usize> {
        self.samples.first().map(|s| s.features)
    }

    pub fn max_frames(&self) -> usize {
        self.samples.iter().map(|s| s.frames).max().unwrap_or(0)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Sample indices grouped by class id.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by = vec![Vec::new(); self.num_classes()];
        for (i, s) in self.samples.iter().enumerate() {
            by[s.label].push(i);
        }
        by
    }

    /// Dataset with the same class table holding the given samples.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            class_names: self.class_names.clone(),
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nc = self.num_classes();
        let feat = self.features();
        for (i, s) in self.samples.iter().enumerate() {
            if s.label >= nc {
                return Err(Error::InvalidLabel {
                    label: s.label,
                    num_classes: nc,
                });
            }
            if Some(s.features) != feat {
                return Err(Error::Data(format!(
                    "sample {i} has {} features, expected {}",
                    s.features,
                    feat.unwrap_or(0)
                )));
            }
        }
        Ok(())
    }
}
