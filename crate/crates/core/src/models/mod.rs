//! The two classifier architectures built from [`crate::nn`] layers.

mod cnntrans;
pub mod config;
mod lstm;

use std::collections::HashMap;

use rand::Rng;

pub use config::{Arch, ModelConfig};

use crate::autograd::{Graph, Var};
use crate::data::normalize::STD_FLOOR;
use crate::data::{pad_and_mask, FeatureStats, KeypointSequence, PaddedBatch};
use crate::error::{Error, Result};
use crate::nn::{glorot_uniform as glorot, BatchNormStats, GradCheckReport, Mode, ParamStore, SuiteRow};
use crate::tensor::{Scalar, Tensor};

pub(crate) const INPUT_MEAN: &str = "input.mean";
pub(crate) const INPUT_STD: &str = "input.std";
pub const HEAD_WEIGHT: &str = "head.w";
pub const HEAD_BIAS: &str = "head.b";
pub(crate) const BN_MOMENTUM: f64 = 0.99;
pub(crate) const BN_EPS: f64 = 1e-3;
pub(crate) const LN_EPS: f64 = 1e-5;

/// A built classifier: configuration, named parameters and current mode.
///
/// Non-trainable entries in the store hold input normalization statistics
/// and batch-norm running statistics; they travel with checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Scalar> {
    config: ModelConfig,
    layers: Vec<String>,
    params: ParamStore<T>,
    mode: Mode,
}

/// Result of one forward pass recorded on a graph.
pub struct ForwardPass<T: Scalar> {
    pub logits: Var,
    /// Batch statistics per batch-norm layer (train mode only), keyed by the
    /// layer's parameter prefix.
    pub batch_stats: Vec<(String, BatchNormStats<T>)>,
}

/// Looks up parameter handles: explicit overrides first, then the store.
pub(crate) struct Binder<'a, T: Scalar> {
    store: &'a ParamStore<T>,
    overrides: Option<&'a HashMap<String, Var>>,
}

impl<T: Scalar> Binder<'_, T> {
    pub(crate) fn get(&self, g: &mut Graph<T>, name: &str) -> Result<Var> {
        if let Some(v) = self.overrides.and_then(|o| o.get(name)) {
            return Ok(*v);
        }
        g.param(self.store, name)
    }

    pub(crate) fn running(&self, prefix: &str) -> Result<BatchNormStats<T>> {
        Ok(BatchNormStats {
            mean: self.store.require(&format!("{prefix}.running_mean"))?.data().to_vec(),
            var: self.store.require(&format!("{prefix}.running_var"))?.data().to_vec(),
        })
    }
}

/// Builds either architecture; identical `(cfg, seed)` give identical weights.
pub fn build<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<Model<T>> {
    match cfg.arch {
        Arch::Lstm => build_lstm(cfg, seed),
        Arch::CnnTrans => build_cnntrans(cfg, seed),
    }
}

pub fn build_lstm<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<Model<T>> {
    if cfg.arch != Arch::Lstm {
        return Err(Error::Config(format!("build_lstm called with arch {}", cfg.arch)));
    }
    cfg.validate()?;
    let (params, layers) = lstm::init(cfg, seed)?;
    Ok(Model::assemble(cfg.clone(), layers, params))
}

pub fn build_cnntrans<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<Model<T>> {
    if cfg.arch != Arch::CnnTrans {
        return Err(Error::Config(format!("build_cnntrans called with arch {}", cfg.arch)));
    }
    cfg.validate()?;
    let (params, layers) = cnntrans::init(cfg, seed)?;
    Ok(Model::assemble(cfg.clone(), layers, params))
}

pub(crate) fn insert_input_norm<T: Scalar>(store: &mut ParamStore<T>, features: usize) -> Result<()> {
    store.insert(INPUT_MEAN, Tensor::zeros(&[features]), false)?;
    store.insert(INPUT_STD, Tensor::full(&[features], T::one()), false)
}

pub(crate) fn insert_head<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    rng: &mut R,
    fan_in: usize,
    classes: usize,
) -> Result<()> {
    store.insert(HEAD_WEIGHT, glorot(rng, &[fan_in, classes], fan_in, classes), true)?;
    store.insert(HEAD_BIAS, Tensor::zeros(&[classes]), true)
}

impl<T: Scalar> Model<T> {
    fn assemble(config: ModelConfig, layers: Vec<String>, params: ParamStore<T>) -> Self {
        Self {
            config,
            layers,
            params,
            mode: Mode::Train,
        }
    }

    /// Rebuilds a model around existing parameters, checking that every
    /// expected name is present with the expected shape.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        let template: Model<T> = build(&config, 0)?;
        if template.params.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters for this configuration, found {}",
                template.params.len(),
                params.len()
            )));
        }
        for p in template.params.iter() {
            let got = params
                .get(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{}`", p.name)))?;
            if got.shape() != p.tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` has shape {:?}, configuration implies {:?}",
                    p.name,
                    got.shape(),
                    p.tensor.shape()
                )));
            }
        }
        let mut params = params;
        for p in params.iter_mut() {
            p.trainable = template.params.get_index(template.params.index_of(&p.name).unwrap()).trainable;
        }
        Ok(Self {
            config,
            layers: template.layers,
            params,
            mode: Mode::Infer,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Layer names in execution order.
    pub fn layers(&self) -> &[String] {
        &self.layers
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params.trainable_count()
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            layers: self.layers.clone(),
            params: self.params.cast(),
            mode: self.mode,
        }
    }

    /// Stores per-feature input statistics applied at the start of every
    /// forward pass.
    pub fn set_input_norm(&mut self, stats: &FeatureStats) -> Result<()> {
        let f = self.config.features;
        if stats.mean.len() != f || stats.std.len() != f {
            return Err(Error::Config(format!(
                "normalization covers {} features, model expects {f}",
                stats.mean.len()
            )));
        }
        let mean = stats.mean.iter().map(|&v| T::from_f64_lossy(v)).collect();
        let std = stats.std.iter().map(|&v| T::from_f64_lossy(v.max(STD_FLOOR))).collect();
        self.params.replace(INPUT_MEAN, Tensor::new(&[f], mean)?)?;
        self.params.replace(INPUT_STD, Tensor::new(&[f], std)?)
    }

    /// Length batches are padded to: fixed for the LSTM, the longest sample
    /// (capped at `seq_len`) for cnntrans.
    pub fn padded_len(&self, samples: &[&KeypointSequence]) -> usize {
        match self.config.arch {
            Arch::Lstm => self.config.seq_len,
            Arch::CnnTrans => samples
                .iter()
                .map(|s| s.frames)
                .max()
                .unwrap_or(1)
                .min(self.config.seq_len),
        }
    }

    pub fn collate(&self, samples: &[&KeypointSequence]) -> Result<PaddedBatch> {
        pad_and_mask(samples, self.padded_len(samples))
    }

    /// Normalized input tensor for `batch`; padded positions stay zero.
    fn prepare(&self, batch: &PaddedBatch) -> Result<Tensor<T>> {
        let shape = batch.values.shape();
        let f = self.config.features;
        if shape[2] != f {
            return Err(Error::shape("forward", shape, &[shape[0], shape[1], f]));
        }
        let ok_len = match self.config.arch {
            Arch::Lstm => shape[1] == self.config.seq_len,
            Arch::CnnTrans => shape[1] <= self.config.seq_len,
        };
        if !ok_len {
            return Err(Error::shape("forward", shape, &[shape[0], self.config.seq_len, f]));
        }
        let mean = self.params.require(INPUT_MEAN)?.data();
        let std = self.params.require(INPUT_STD)?.data();
        let mut x: Tensor<T> = batch.values_as();
        let valid = batch.mask.valid();
        for (pos, row) in x.data_mut().chunks_mut(f).enumerate() {
            if valid[pos] {
                for ((v, &m), &s) in row.iter_mut().zip(mean).zip(std) {
                    *v = (*v - m) / s;
                }
            }
        }
        Ok(x)
    }

    /// Records the forward pass on `g` in the model's current mode.
    pub fn logits<R: Rng + ?Sized>(&self, g: &mut Graph<T>, batch: &PaddedBatch, rng: &mut R) -> Result<ForwardPass<T>> {
        self.logits_with(g, batch, self.mode, rng, None)
    }

    pub(crate) fn logits_with<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        batch: &PaddedBatch,
        mode: Mode,
        rng: &mut R,
        overrides: Option<&HashMap<String, Var>>,
    ) -> Result<ForwardPass<T>> {
        let x = self.prepare(batch)?;
        let x = g.constant(x);
        let bind = Binder {
            store: &self.params,
            overrides,
        };
        match self.config.arch {
            Arch::Lstm => lstm::forward(&self.config, g, &bind, x, &batch.mask, mode, rng),
            Arch::CnnTrans => cnntrans::forward(&self.config, g, &bind, x, &batch.mask, mode, rng),
        }
    }

    /// Class probabilities `[batch, num_classes]` in the current mode.
    pub fn forward<R: Rng + ?Sized>(&self, batch: &PaddedBatch, rng: &mut R) -> Result<Tensor<T>> {
        let mut g = Graph::inference();
        let pass = self.logits(&mut g, batch, rng)?;
        let probs = g.softmax(pass.logits)?;
        Ok(g.value(probs).clone())
    }

    /// Deterministic probabilities regardless of the current mode.
    pub fn predict_proba(&self, batch: &PaddedBatch) -> Result<Tensor<T>> {
        let mut g = Graph::inference();
        let mut rng = crate::data::rng::stream(0, "unused");
        let pass = self.logits_with(&mut g, batch, Mode::Infer, &mut rng, None)?;
        let probs = g.softmax(pass.logits)?;
        Ok(g.value(probs).clone())
    }

    /// Arg-max class per sample; ties go to the lowest class id.
    pub fn predict(&self, batch: &PaddedBatch) -> Result<Vec<usize>> {
        let probs = self.predict_proba(batch)?;
        Ok(argmax_rows(probs.data(), self.config.num_classes))
    }

    /// Folds train-mode batch statistics into the running statistics.
    pub fn update_running_stats(&mut self, batch_stats: &[(String, BatchNormStats<T>)]) -> Result<()> {
        for (prefix, stats) in batch_stats {
            let mut running = Binder {
                store: &self.params,
                overrides: None,
            }
            .running(prefix)?;
            running.update(stats, BN_MOMENTUM);
            self.set_running(prefix, running)?;
        }
        Ok(())
    }

    pub(crate) fn set_running(&mut self, prefix: &str, stats: BatchNormStats<T>) -> Result<()> {
        let n = stats.mean.len();
        self.params.replace(&format!("{prefix}.running_mean"), Tensor::new(&[n], stats.mean)?)?;
        self.params.replace(&format!("{prefix}.running_var"), Tensor::new(&[n], stats.var)?)
    }

    /// Prefixes of every batch-norm layer.
    pub fn batch_norm_layers(&self) -> Vec<String> {
        self.params
            .iter()
            .filter_map(|p| p.name.strip_suffix(".running_mean").map(str::to_string))
            .collect()
    }

    /// Copy with a freshly initialized classifier for `num_classes`; every
    /// other parameter is carried over unchanged.
    pub fn reinit_head(&self, num_classes: usize, seed: u64) -> Result<Model<T>> {
        if num_classes == 0 {
            return Err(Error::Config("num_classes must be at least 1".into()));
        }
        let fan_in = self.params.require(HEAD_WEIGHT)?.shape()[0];
        let mut rng = crate::data::rng::stream(seed, "head");
        let mut out = self.clone();
        out.config.num_classes = num_classes;
        out.params
            .replace(HEAD_WEIGHT, glorot(&mut rng, &[fan_in, num_classes], fan_in, num_classes))?;
        out.params.replace(HEAD_BIAS, Tensor::zeros(&[num_classes]))?;
        Ok(out)
    }
}

pub fn argmax_rows<T: Scalar>(data: &[T], cols: usize) -> Vec<usize> {
    data.chunks(cols)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Central-difference check of the full training loss (train mode, fixed
/// dropout masks) with respect to every trainable parameter.
pub fn model_gradient_check(model: &Model<f64>, batch: &PaddedBatch, epsilon: f64) -> Result<GradCheckReport> {
    let names: Vec<String> = model.params.iter().filter(|p| p.trainable).map(|p| p.name.clone()).collect();
    let inputs: Vec<Tensor<f64>> = names.iter().map(|n| model.params.require(n).cloned()).collect::<Result<_>>()?;
    let labels = batch.labels.clone();
    crate::nn::gradient_check(
        |g, vars| {
            let overrides: HashMap<String, Var> = names.iter().cloned().zip(vars.iter().copied()).collect();
            let mut rng = crate::data::rng::stream(0, "gradcheck-dropout");
            let pass = model.logits_with(g, batch, Mode::Train, &mut rng, Some(&overrides))?;
            g.cross_entropy(pass.logits, &labels)
        },
        &inputs,
        epsilon,
    )
}

/// Tiny configuration of `arch` used by the model gradient checks.
pub fn tiny_config(arch: Arch) -> ModelConfig {
    let mut cfg = ModelConfig::new(arch, 8, 3);
    cfg.seq_len = 6;
    cfg.lstm_units = 4;
    cfg.head_hidden = 5;
    cfg.d_model = 8;
    cfg.heads = 2;
    cfg.ffn_hidden = Some(12);
    cfg.k_eca = 3;
    cfg.conv_kernel = 3;
    cfg
}

/// Gradient checks of both full models on tiny instances (batch 2, up to
/// 6 frames, 8 features, 3 classes, one sample padded).
pub fn model_suite(epsilon: f64) -> Result<Vec<SuiteRow>> {
    let mut rows = Vec::new();
    for arch in [Arch::Lstm, Arch::CnnTrans] {
        let model: Model<f64> = build(&tiny_config(arch), 21)?;
        let mut rng = crate::data::rng::stream(10, "model-suite");
        let samples: Vec<KeypointSequence> = [6usize, 4]
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let vals = (0..t * 8).map(|_| rng.random_range(-1.5f32..1.5)).collect();
                KeypointSequence::new(t, 8, vals, i)
            })
            .collect::<Result<_>>()?;
        let refs: Vec<&KeypointSequence> = samples.iter().collect();
        let batch = model.collate(&refs)?;
        rows.push(SuiteRow {
            op: format!("model/{arch}"),
            report: model_gradient_check(&model, &batch, epsilon)?,
        });
    }
    Ok(rows)
}
