use super::KeypointSequence;
use crate::error::{Error, Result};
use crate::nn::SequenceMask;
use crate::tensor::{Scalar, Tensor};

/// Zero-padded `[batch, max_len, features]` values with their mask.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedBatch {
    pub values: Tensor<f32>,
    pub mask: SequenceMask,
    pub labels: Vec<usize>,
}

impl PaddedBatch {
    pub fn batch(&self) -> usize {
        self.labels.len()
    }

    pub fn max_len(&self) -> usize {
        self.mask.max_len()
    }

    pub fn features(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn values_as<T: Scalar>(&self) -> Tensor<T> {
        self.values.cast()
    }

    /// Valid prefix of sample `b`, the inverse of padding.
    pub fn unpad(&self, b: usize) -> KeypointSequence {
        let (len, feat) = (self.max_len(), self.features());
        let frames = self.mask.length(b);
        let start = b * len * feat;
        KeypointSequence {
            frames,
            features: feat,
            values: self.values.data()[start..start + frames * feat].to_vec(),
            label: self.labels[b],
        }
    }
}

/// Tail-pads every sample with zeros to `max_len`; longer samples keep their
/// first `max_len` frames.
pub fn pad_and_mask<S: std::borrow::Borrow<KeypointSequence>>(samples: &[S], max_len: usize) -> Result<PaddedBatch> {
    if samples.is_empty() {
        return Err(Error::Data("pad_and_mask: empty sample list".into()));
    }
    if max_len == 0 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    let feat = samples[0].borrow().features;
    let mut values = vec![0.0f32; samples.len() * max_len * feat];
    let mut lengths = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    for (b, s) in samples.iter().enumerate() {
        let s = s.borrow();
        if s.features != feat {
            return Err(Error::Data(format!("sample {b} has {} features, expected {feat}", s.features)));
        }
        let frames = s.frames.min(max_len);
        let dst = b * max_len * feat;
        values[dst..dst + frames * feat].copy_from_slice(&s.values[..frames * feat]);
        lengths.push(frames);
        labels.push(s.label);
    }
    Ok(PaddedBatch {
        values: Tensor::new(&[samples.len(), max_len, feat], values)?,
        mask: SequenceMask::from_lengths(&lengths, max_len)?,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(frames: usize, features: usize) -> KeypointSequence {
        KeypointSequence::new(frames, features, (0..frames * features).map(|i| i as f32 + 1.0).collect(), 0).unwrap()
    }

    #[test]
    fn fifty_frames_into_384() {
        let b = pad_and_mask(&[seq(50, 174)], 384).unwrap();
        let valid = b.mask.valid();
        assert_eq!(valid.iter().filter(|&&v| v).count(), 50);
        assert!(valid[..50].iter().all(|&v| v) && valid[50..].iter().all(|&v| !v));
        assert_eq!(valid.len(), 384);
    }

    #[test]
    fn exact_and_overlong() {
        let b = pad_and_mask(&[seq(8, 2)], 8).unwrap();
        assert!(b.mask.valid().iter().all(|&v| v));
        let long = seq(18, 2);
        let b = pad_and_mask(&[&long], 8).unwrap();
        assert!(b.mask.valid().iter().all(|&v| v));
        assert_eq!(b.values.data(), &long.values[..16]);
        assert!(pad_and_mask::<KeypointSequence>(&[], 8).is_err());
    }

    proptest! {
        #[test]
        fn padding_is_zero_and_unpad_round_trips(
            lens in proptest::collection::vec(1usize..12, 1..5),
            max_len in 1usize..12,
        ) {
            let samples: Vec<_> = lens.iter().map(|&l| seq(l, 3)).collect();
            let b = pad_and_mask(&samples, max_len).unwrap();
            for (i, s) in samples.iter().enumerate() {
                for t in 0..max_len {
                    if !b.mask.is_valid(i, t) {
                        let off = (i * max_len + t) * 3;
                        prop_assert!(b.values.data()[off..off + 3].iter().all(|&v| v == 0.0));
                    }
                }
                if s.frames <= max_len {
                    prop_assert_eq!(&b.unpad(i), s);
                }
            }
        }
    }
}
