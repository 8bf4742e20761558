use crate::error::{Error, Result};

/// Per-sample validity of each padded timestep. Valid frames always form a
/// non-empty prefix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequenceMask {
    batch: usize,
    max_len: usize,
    valid: Vec<bool>,
}

impl SequenceMask {
    /// Builds a prefix mask from per-sample valid lengths.
    pub fn from_lengths(lengths: &[usize], max_len: usize) -> Result<Self> {
        if max_len == 0 {
            return Err(Error::Mask("max_len must be at least 1".into()));
        }
        let mut valid = Vec::with_capacity(lengths.len() * max_len);
        for (i, &len) in lengths.iter().enumerate() {
            if len == 0 || len > max_len {
                return Err(Error::Mask(format!("sample {i} has valid length {len} (max_len {max_len})")));
            }
            valid.extend((0..max_len).map(|t| t < len));
        }
        Ok(Self {
            batch: lengths.len(),
            max_len,
            valid,
        })
    }

    /// Mask with every frame valid.
    pub fn full(batch: usize, max_len: usize) -> Self {
        Self {
            batch,
            max_len,
            valid: vec![true; batch * max_len],
        }
    }

    /// Validates an explicit boolean layout (`batch * max_len`, row-major).
    pub fn from_valid(batch: usize, max_len: usize, valid: Vec<bool>) -> Result<Self> {
        if valid.len() != batch * max_len {
            return Err(Error::Mask(format!(
                "expected {} entries, got {}",
                batch * max_len,
                valid.len()
            )));
        }
        for b in 0..batch {
            let row = &valid[b * max_len..(b + 1) * max_len];
            if !row.first().copied().unwrap_or(false) {
                return Err(Error::Mask(format!("sample {b} has no valid frame")));
            }
            if row.windows(2).any(|w| !w[0] && w[1]) {
                return Err(Error::Mask(format!("sample {b}: valid frames are not a prefix")));
            }
        }
        Ok(Self { batch, max_len, valid })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn is_valid(&self, b: usize, t: usize) -> bool {
        self.valid[b * self.max_len + t]
    }

    pub fn length(&self, b: usize) -> usize {
        self.valid[b * self.max_len..(b + 1) * self.max_len]
            .iter()
            .take_while(|&&v| v)
            .count()
    }

    pub fn lengths(&self) -> Vec<usize> {
        (0..self.batch).map(|b| self.length(b)).collect()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_and_nonempty_enforced() {
        assert!(SequenceMask::from_valid(1, 3, vec![true, false, true]).is_err());
        assert!(SequenceMask::from_valid(1, 3, vec![false, false, false]).is_err());
        assert!(SequenceMask::from_lengths(&[0], 3).is_err());
        let m = SequenceMask::from_lengths(&[2, 3], 3).unwrap();
        assert_eq!(m.lengths(), vec![2, 3]);
        assert_eq!(m.valid_count(), 5);
        assert!(!m.is_valid(0, 2));
    }
}
