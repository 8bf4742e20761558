use crate::data::{Dataset, KeypointSequence};
use crate::error::{Error, Result};
use crate::models::Model;
use crate::tensor::Scalar;

/// Per-class and overall classification quality.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub overall_accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub support: Vec<usize>,
    pub macro_f1: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EvalReport {
    pub fn from_confusion(confusion: Vec<Vec<usize>>, class_names: Vec<String>) -> Result<Self> {
        let n = confusion.len();
        if n == 0 || confusion.iter().any(|r| r.len() != n) {
            return Err(Error::Data("confusion matrix must be square and non-empty".into()));
        }
        if class_names.len() != n {
            return Err(Error::Data(format!("{} class names for {n} classes", class_names.len())));
        }
        let total: usize = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(Error::Data("cannot report on zero predictions".into()));
        }
        let support: Vec<usize> = confusion.iter().map(|r| r.iter().sum()).collect();
        let predicted: Vec<usize> = (0..n).map(|c| confusion.iter().map(|r| r[c]).sum()).collect();
        let tp: Vec<usize> = (0..n).map(|c| confusion[c][c]).collect();
        let precision: Vec<f64> = (0..n).map(|c| ratio(tp[c], predicted[c])).collect();
        let recall: Vec<f64> = (0..n).map(|c| ratio(tp[c], support[c])).collect();
        let f1: Vec<f64> = (0..n)
            .map(|c| {
                let (p, r) = (precision[c], recall[c]);
                if p + r == 0.0 {
                    0.0
                } else {
                    2.0 * p * r / (p + r)
                }
            })
            .collect();
        let macro_f1 = f1.iter().sum::<f64>() / n as f64;
        Ok(Self {
            class_names,
            overall_accuracy: ratio(tp.iter().sum(), total),
            precision,
            recall,
            f1,
            support,
            macro_f1,
            confusion,
        })
    }

    pub fn from_predictions(labels: &[usize], predictions: &[usize], class_names: Vec<String>) -> Result<Self> {
        let n = class_names.len();
        if labels.len() != predictions.len() {
            return Err(Error::Data(format!(
                "{} labels but {} predictions",
                labels.len(),
                predictions.len()
            )));
        }
        let mut confusion = vec![vec![0usize; n]; n];
        for (&l, &p) in labels.iter().zip(predictions) {
            if l >= n || p >= n {
                return Err(Error::InvalidLabel {
                    label: l.max(p),
                    num_classes: n,
                });
            }
            confusion[l][p] += 1;
        }
        Self::from_confusion(confusion, class_names)
    }

    pub fn num_classes(&self) -> usize {
        self.confusion.len()
    }

    pub fn total(&self) -> usize {
        self.support.iter().sum()
    }

    /// Pooled recall over all samples; equals accuracy for single-label data.
    pub fn micro_recall(&self) -> f64 {
        let tp: usize = (0..self.num_classes()).map(|c| self.confusion[c][c]).sum();
        ratio(tp, self.total())
    }
}

/// Predicts every sample of `ds` in infer mode and tabulates the results.
/// Ties in the probabilities resolve to the lowest class id.
pub fn evaluate<T: Scalar>(model: &Model<T>, ds: &Dataset, batch_size: usize) -> Result<EvalReport> {
    check_compatible(model, ds)?;
    let predictions = predict_all(model, &ds.samples, batch_size)?;
    EvalReport::from_predictions(&ds.labels(), &predictions, ds.class_names.clone())
}

fn check_compatible<T: Scalar>(model: &Model<T>, ds: &Dataset) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    if ds.num_classes() != model.config().num_classes {
        return Err(Error::Data(format!(
            "dataset has {} classes, model has {} outputs",
            ds.num_classes(),
            model.config().num_classes
        )));
    }
    Ok(())
}

fn predict_all<T: Scalar>(model: &Model<T>, samples: &[KeypointSequence], batch_size: usize) -> Result<Vec<usize>> {
    let mut predictions = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&KeypointSequence> = chunk.iter().collect();
        predictions.extend(model.predict(&model.collate(&refs)?)?);
    }
    Ok(predictions)
}

/// [`evaluate`] with the samples split into `threads` contiguous shards.
/// Shards are rejoined in order, so the report does not depend on the
/// thread count.
pub fn evaluate_parallel<T: Scalar>(
    model: &Model<T>,
    ds: &Dataset,
    batch_size: usize,
    threads: usize,
) -> Result<EvalReport> {
    check_compatible(model, ds)?;
    if threads <= 1 {
        return evaluate(model, ds, batch_size);
    }
    let shard = ds.len().div_ceil(threads);
    let parts: Vec<Result<Vec<usize>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = ds
            .samples
            .chunks(shard)
            .map(|part| scope.spawn(move || predict_all(model, part, batch_size)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut predictions = Vec::with_capacity(ds.len());
    for p in parts {
        predictions.extend(p?);
    }
    EvalReport::from_predictions(&ds.labels(), &predictions, ds.class_names.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::rng::stream;
    use rand::Rng;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn perfect_predictions() {
        let labels = [0, 1, 2, 2, 1];
        let r = EvalReport::from_predictions(&labels, &labels, names(3)).unwrap();
        assert_eq!(r.overall_accuracy, 1.0);
        assert!(r.f1.iter().all(|&f| f == 1.0));
        for (i, row) in r.confusion.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(v > 0, i == j);
            }
        }
    }

    #[test]
    fn degenerate_predictor() {
        let r = EvalReport::from_predictions(&[0, 1, 0, 1], &[0, 0, 0, 0], names(2)).unwrap();
        assert_eq!(r.overall_accuracy, 0.5);
        assert_eq!(r.recall[1], 0.0);
        assert_eq!(r.precision[1], 0.0);
        assert_eq!(r.f1[1], 0.0);
    }

    #[test]
    fn hand_computed_fixture() {
        let cm = vec![vec![2, 1, 0], vec![0, 2, 0], vec![1, 0, 4]];
        let r = EvalReport::from_confusion(cm, names(3)).unwrap();
        let want_p = [2.0 / 3.0, 2.0 / 3.0, 1.0];
        let want_r = [2.0 / 3.0, 1.0, 0.8];
        let want_f = [2.0 / 3.0, 0.8, 8.0 / 9.0];
        for c in 0..3 {
            assert!((r.precision[c] - want_p[c]).abs() < 1e-9);
            assert!((r.recall[c] - want_r[c]).abs() < 1e-9);
            assert!((r.f1[c] - want_f[c]).abs() < 1e-9);
        }
        assert_eq!(r.support, vec![3, 2, 5]);
        assert!((r.overall_accuracy - 0.8).abs() < 1e-12);
        assert!((r.macro_f1 - (2.0 / 3.0 + 0.8 + 8.0 / 9.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn invariants_on_random_predictions() {
        let mut rng = stream(12, "eval");
        for _ in 0..50 {
            let n = rng.random_range(2..8);
            let len = rng.random_range(1..60);
            let labels: Vec<usize> = (0..len).map(|_| rng.random_range(0..n)).collect();
            let preds: Vec<usize> = (0..len).map(|_| rng.random_range(0..n)).collect();
            let r = EvalReport::from_predictions(&labels, &preds, names(n)).unwrap();
            assert_eq!(r.total(), len);
            assert_eq!(r.micro_recall(), r.overall_accuracy);
            for c in 0..n {
                assert_eq!(r.confusion[c].iter().sum::<usize>(), r.support[c]);
                let tp = labels.iter().zip(&preds).filter(|&(&l, &p)| l == c && p == c).count();
                let pp = preds.iter().filter(|&&p| p == c).count();
                let ap = labels.iter().filter(|&&l| l == c).count();
                let p = if pp == 0 { 0.0 } else { tp as f64 / pp as f64 };
                let rc = if ap == 0 { 0.0 } else { tp as f64 / ap as f64 };
                let f = if p + rc == 0.0 { 0.0 } else { 2.0 * p * rc / (p + rc) };
                assert!((r.f1[c] - f).abs() < 1e-9);
                assert!((0.0..=1.0).contains(&r.precision[c]) && (0.0..=1.0).contains(&r.recall[c]));
            }
        }
    }

    #[test]
    fn thread_count_does_not_change_report() {
        use crate::data::{synth_generate, SynthConfig};
        use crate::models::{build, Arch, ModelConfig};
        let ds = synth_generate(&SynthConfig {
            num_classes: 4,
            samples_per_class: 5,
            frames: 6,
            features: 8,
            ..Default::default()
        })
        .unwrap();
        let mut cfg = ModelConfig::new(Arch::CnnTrans, 8, 4);
        cfg.d_model = 8;
        cfg.heads = 2;
        let model: Model<f32> = build(&cfg, 1).unwrap();
        let one = evaluate(&model, &ds, 3).unwrap();
        assert_eq!(one, evaluate(&model, &ds, 3).unwrap());
        for threads in [2, 3, 7] {
            assert_eq!(evaluate_parallel(&model, &ds, 3, threads).unwrap(), one);
        }
    }

    #[test]
    fn rejects_empty_and_out_of_range() {
        assert!(EvalReport::from_predictions(&[], &[], names(2)).is_err());
        assert!(EvalReport::from_predictions(&[3], &[0], names(2)).is_err());
    }
}
