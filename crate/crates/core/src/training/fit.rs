use std::fs::File;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;

use super::checkpoint::save_checkpoint;
use super::config::{EarlyStopPolicy, TrainConfig};
use super::optim::{OptimizerState, RadamConfig, SwaState};
use super::schedule::lr_schedule;
use crate::autograd::Graph;
use crate::data::rng::stream;
use crate::data::{augment, Dataset, FeatureStats, KeypointSequence, NormScheme, PaddedBatch};
use crate::error::{Error, Result};
use crate::models::{argmax_rows, Model};
use crate::nn::{BatchNormStats, Mode};
use crate::tensor::Scalar;

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub lr: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Continue,
    Stop,
}

pub fn early_stop_check(history: &[TrainLogRow], policy: &EarlyStopPolicy) -> Decision {
    match *policy {
        EarlyStopPolicy::Off => Decision::Continue,
        EarlyStopPolicy::TrainAboveVal => match history.last() {
            Some(r) if r.train_loss > r.val_loss => Decision::Stop,
            _ => Decision::Continue,
        },
        EarlyStopPolicy::ValLoss { patience, min_delta } => {
            let mut best = f64::INFINITY;
            let mut since = 0usize;
            for r in history {
                if r.val_loss < best - min_delta {
                    best = r.val_loss;
                    since = 0;
                } else {
                    since += 1;
                }
            }
            if since >= patience.max(1) {
                Decision::Stop
            } else {
                Decision::Continue
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    EpochBudget,
    EarlyStop,
    TargetReached,
}

pub struct FitOutcome<T: Scalar> {
    /// Weights of the epoch with the highest validation accuracy.
    pub best: Model<T>,
    pub best_epoch: usize,
    /// Weights after the last epoch, averaged when weight averaging ran.
    pub last: Model<T>,
    pub history: Vec<TrainLogRow>,
    pub stop_reason: StopReason,
    pub swa_snapshots: usize,
}

/// Mean loss and accuracy of `model` over `ds` in infer mode.
pub fn loss_and_accuracy<T: Scalar>(model: &Model<T>, ds: &Dataset, batch_size: usize) -> Result<(f64, f64)> {
    if ds.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    let mut rng = stream(0, "unused");
    let (mut loss, mut correct) = (0.0, 0usize);
    for chunk in ds.samples.chunks(batch_size.max(1)) {
        let refs: Vec<&KeypointSequence> = chunk.iter().collect();
        let batch = model.collate(&refs)?;
        let mut g = Graph::inference();
        let pass = model.logits_with(&mut g, &batch, Mode::Infer, &mut rng, None)?;
        let l = g.cross_entropy(pass.logits, &batch.labels)?;
        loss += g.data(l)[0].as_f64() * chunk.len() as f64;
        correct += count_correct(g.data(pass.logits), &batch.labels, model.config().num_classes);
    }
    Ok((loss / ds.len() as f64, correct as f64 / ds.len() as f64))
}

fn count_correct<T: Scalar>(logits: &[T], labels: &[usize], classes: usize) -> usize {
    argmax_rows(logits, classes).iter().zip(labels).filter(|(p, l)| p == l).count()
}

/// One optimizer step on `batch` in train mode. Returns the batch loss and
/// the number of correct train-mode predictions.
pub fn train_step<T: Scalar, R: rand::Rng + ?Sized>(
    model: &mut Model<T>,
    opt: &mut OptimizerState<T>,
    batch: &PaddedBatch,
    lr: f64,
    rng: &mut R,
) -> Result<(f64, usize)> {
    let mut g = Graph::new();
    let pass = model.logits_with(&mut g, batch, Mode::Train, rng, None)?;
    let loss = g.cross_entropy(pass.logits, &batch.labels)?;
    let value = g.data(loss)[0].as_f64();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("training loss became {value} at optimizer step {}", opt.t + 1)));
    }
    let correct = count_correct(g.data(pass.logits), &batch.labels, model.config().num_classes);
    let mut grads = g.backward(loss);
    let mut per_param = vec![None; model.params().len()];
    for (idx, var) in g.bound_params() {
        per_param[idx] = grads.take(var);
    }
    opt.step(model.params_mut(), &per_param, lr)?;
    model.update_running_stats(&pass.batch_stats)?;
    Ok((value, correct))
}

/// Sets every batch-norm running statistic to the average of the batch
/// statistics seen in one pass over `ds`.
pub fn recompute_batch_norm<T: Scalar>(model: &mut Model<T>, ds: &Dataset, batch_size: usize) -> Result<()> {
    let layers = model.batch_norm_layers();
    if layers.is_empty() || ds.is_empty() {
        return Ok(());
    }
    let mut sums: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let mut batches = 0usize;
    let mut rng = stream(0, "unused");
    for chunk in ds.samples.chunks(batch_size.max(1)) {
        let refs: Vec<&KeypointSequence> = chunk.iter().collect();
        let batch = model.collate(&refs)?;
        let mut g = Graph::inference();
        let pass = model.logits_with(&mut g, &batch, Mode::Train, &mut rng, None)?;
        if sums.is_empty() {
            sums = pass
                .batch_stats
                .iter()
                .map(|(_, s)| (vec![0.0; s.mean.len()], vec![0.0; s.var.len()]))
                .collect();
        }
        for ((m, v), (_, s)) in sums.iter_mut().zip(&pass.batch_stats) {
            m.iter_mut().zip(&s.mean).for_each(|(a, &b)| *a += b.as_f64());
            v.iter_mut().zip(&s.var).for_each(|(a, &b)| *a += b.as_f64());
        }
        batches += 1;
    }
    let n = batches as f64;
    for (prefix, (m, v)) in layers.iter().zip(sums) {
        let stats = BatchNormStats {
            mean: m.iter().map(|&x| T::from_f64_lossy(x / n)).collect(),
            var: v.iter().map(|&x| T::from_f64_lossy(x / n)).collect(),
        };
        model.set_running(prefix, stats)?;
    }
    Ok(())
}

struct LogWriter {
    inner: Option<csv::Writer<File>>,
}

impl LogWriter {
    fn open(path: Option<&Path>) -> Result<Self> {
        let inner = match path {
            Some(p) => Some(csv::Writer::from_path(p).map_err(|e| Error::Format {
                path: p.to_path_buf(),
                msg: e.to_string(),
            })?),
            None => None,
        };
        Ok(Self { inner })
    }

    fn write(&mut self, row: &TrainLogRow) -> Result<()> {
        if let Some(w) = &mut self.inner {
            w.serialize(row)
                .and_then(|_| w.flush().map_err(csv::Error::from))
                .map_err(|e| Error::Data(format!("writing training log: {e}")))?;
        }
        Ok(())
    }
}

pub fn fit<T: Scalar>(model: Model<T>, train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<FitOutcome<T>> {
    fit_with(model, train, val, cfg, &mut |_| {})
}

/// Full training run; `on_epoch` sees every log row as it is produced.
pub fn fit_with<T: Scalar>(
    mut model: Model<T>,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&TrainLogRow),
) -> Result<FitOutcome<T>> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("training and validation sets must be non-empty".into()));
    }
    let mc = model.config().clone();
    for ds in [train, val] {
        ds.validate()?;
        if ds.features() != Some(mc.features) {
            return Err(Error::Data(format!(
                "dataset has {} features, model expects {}",
                ds.features().unwrap_or(0),
                mc.features
            )));
        }
        if ds.num_classes() > mc.num_classes {
            return Err(Error::Data(format!(
                "dataset has {} classes, model has {} outputs",
                ds.num_classes(),
                mc.num_classes
            )));
        }
    }
    if cfg.norm == NormScheme::PerFeatureZscore {
        model.set_input_norm(&FeatureStats::fit(train)?)?;
    }
    let radam = RadamConfig {
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.eps,
        weight_decay: cfg.weight_decay,
    };
    let mut opt = OptimizerState::new(model.params(), radam, Some((cfg.lookahead_k, cfg.lookahead_alpha)));
    let schedule = cfg.schedule();
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let swa_start = cfg.swa_start_fraction.map(|f| (cfg.epochs as f64 * f).floor() as usize);

    let mut shuffle_rng = stream(cfg.seed, "shuffle");
    let mut dropout_rng = stream(cfg.seed, "dropout");
    let mut augment_rng = stream(cfg.seed, "augment");
    let mut log = LogWriter::open(cfg.log_path.as_deref())?;
    let started = Instant::now();

    let mut history = Vec::new();
    let mut best: Option<(Model<T>, usize, f64)> = None;
    let mut swa = SwaState::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0usize;
    let mut stop_reason = StopReason::EpochBudget;

    for epoch in 0..cfg.epochs {
        model.set_mode(Mode::Train);
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut correct, mut lr) = (0.0, 0usize, schedule.lr_start);
        for chunk in order.chunks(cfg.batch_size) {
            let augmented: Vec<KeypointSequence>;
            let refs: Vec<&KeypointSequence> = if cfg.augment.is_identity() {
                chunk.iter().map(|&i| &train.samples[i]).collect()
            } else {
                augmented = chunk
                    .iter()
                    .map(|&i| augment(&train.samples[i], &mut augment_rng, &cfg.augment))
                    .collect();
                augmented.iter().collect()
            };
            let batch = model.collate(&refs)?;
            lr = lr_schedule(step, total_steps, &schedule)?;
            let (l, c) = train_step(&mut model, &mut opt, &batch, lr, &mut dropout_rng)?;
            loss_sum += l * chunk.len() as f64;
            correct += c;
            step += 1;
        }
        model.set_mode(Mode::Infer);
        let (val_loss, val_acc) = loss_and_accuracy(&model, val, cfg.batch_size)?;
        let row = TrainLogRow {
            epoch: epoch + 1,
            train_loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
            val_loss,
            val_acc,
            lr,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        log.write(&row)?;
        on_epoch(&row);
        history.push(row);

        if best.as_ref().is_none_or(|(_, _, acc)| val_acc > *acc) {
            if let Some(path) = &cfg.checkpoint_path {
                save_checkpoint(&model, &padded_names(train, val, mc.num_classes), path)?;
            }
            best = Some((model.clone(), epoch + 1, val_acc));
        }
        if swa_start.is_some_and(|s| epoch >= s) {
            swa.update(model.params());
        }
        if cfg.target_val_acc.is_some_and(|t| val_acc >= t) {
            stop_reason = StopReason::TargetReached;
            break;
        }
        if early_stop_check(&history, &cfg.early_stop) == Decision::Stop {
            stop_reason = StopReason::EarlyStop;
            break;
        }
    }

    let mut last = model;
    if swa.count() > 0 {
        swa.finalize(last.params_mut())?;
        recompute_batch_norm(&mut last, train, cfg.batch_size)?;
    }
    last.set_mode(Mode::Infer);
    let (mut best, best_epoch, _) = best.expect("at least one epoch ran");
    best.set_mode(Mode::Infer);
    Ok(FitOutcome {
        best,
        best_epoch,
        last,
        history,
        stop_reason,
        swa_snapshots: swa.count(),
    })
}

/// Class table to store with a checkpoint: the training set's names,
/// extended with placeholders if the model has more outputs.
fn padded_names(train: &Dataset, val: &Dataset, classes: usize) -> Vec<String> {
    let src = if train.num_classes() >= val.num_classes() {
        &train.class_names
    } else {
        &val.class_names
    };
    (0..classes)
        .map(|i| src.get(i).cloned().unwrap_or_else(|| format!("class_{i}")))
        .collect()
}
