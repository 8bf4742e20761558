use rand::seq::SliceRandom;

use super::rng::stream;
use super::Dataset;
use crate::error::{Error, Result};

/// Stratified split; each class contributes `round(n * val_fraction)` samples
/// to validation, clamped so both sides keep at least one.
pub fn split_train_val(ds: &Dataset, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, val) = split_indices(ds, val_fraction, seed)?;
    Ok((ds.subset(&train), ds.subset(&val)))
}

/// Index form of [`split_train_val`], each side sorted ascending.
pub fn split_indices(ds: &Dataset, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Config(format!("val_fraction must be in (0, 1), got {val_fraction}")));
    }
    let mut rng = stream(seed, "split");
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (c, mut idx) in ds.indices_by_class().into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            return Err(Error::Data(format!(
                "class `{}` has {} sample(s); a split needs at least 2",
                ds.class_names[c],
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let n_val = ((idx.len() as f64 * val_fraction).round() as usize).clamp(1, idx.len() - 1);
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// Stratified k-fold as `(train, val)` index sets. Within each class the
/// shuffled samples are dealt round-robin, continuing from where the previous
/// class stopped, so fold sizes differ by at most one.
pub fn kfold_split(ds: &Dataset, n_splits: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if n_splits < 2 {
        return Err(Error::Config(format!("n_splits must be at least 2, got {n_splits}")));
    }
    let mut rng = stream(seed, "kfold");
    let mut folds = vec![Vec::new(); n_splits];
    let mut next = 0usize;
    for (c, mut idx) in ds.indices_by_class().into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < n_splits {
            return Err(Error::Data(format!(
                "class `{}` has {} sample(s), fewer than {n_splits} folds",
                ds.class_names[c],
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for i in idx {
            folds[next].push(i);
            next = (next + 1) % n_splits;
        }
    }
    Ok((0..n_splits)
        .map(|k| {
            let mut val = folds[k].clone();
            val.sort_unstable();
            let mut train: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != k)
                .flat_map(|(_, f)| f.iter().copied())
                .collect();
            train.sort_unstable();
            (train, val)
        })
        .collect())
}
