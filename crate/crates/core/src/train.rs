//! Losses, metrics, optimizer, schedule, the training loop, evaluation and
//! checkpoints.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CodecError, Reader, Writer};
use crate::components::{Sample, SplitTag};
use crate::data::Dataset;
use crate::model::{Conditioning, ModelConfig, ModelError, Prepared, UnisolverModel};
use crate::solvers::seeded_rng;
use crate::tensor::{Graph, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("relative L2 is undefined for a zero-norm reference")]
    ZeroNorm,
    #[error("relative promotion needs a positive baseline error, got {0}")]
    NonPositiveBaseline(f64),
    #[error("prediction shape {pred:?} does not match target shape {truth:?}")]
    Shape { pred: Vec<usize>, truth: Vec<usize> },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training set is empty")]
    NoSamples,
    #[error("loss became non-finite at epoch {epoch}; last good checkpoint is from epoch {}", .last_good.epoch)]
    NonFinite { epoch: usize, last_good: Box<Checkpoint> },
    #[error("checkpoint parameter {name}: {message}")]
    Checkpoint { name: String, message: String },
    #[error("checkpoint was trained with {field} = {saved} but the configuration declares {declared}")]
    ConfigMismatch {
        field: &'static str,
        saved: String,
        declared: String,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("configuration snapshot: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// `‖pred − truth‖₂ / ‖truth‖₂` over every element.
pub fn relative_l2(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    if pred.shape() != truth.shape() {
        return Err(TrainError::Shape {
            pred: pred.shape().to_vec(),
            truth: truth.shape().to_vec(),
        });
    }
    let norm = truth.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(TrainError::ZeroNorm);
    }
    let diff = pred.data().iter().zip(truth.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok(diff / norm)
}

/// `1 − ours / baseline`.
pub fn relative_promotion(ours: f64, baseline: f64) -> Result<f64> {
    if !(baseline > 0.0) {
        return Err(TrainError::NonPositiveBaseline(baseline));
    }
    Ok(1.0 - ours / baseline)
}

/// Records the relative L2 between `pred` and a constant target.
pub fn relative_l2_loss(g: &mut Graph, pred: Var, truth: &Tensor) -> Result<Var> {
    let norm = truth.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(TrainError::ZeroNorm);
    }
    let t = g.constant(truth.clone());
    let d = g.sub(pred, t)?;
    let sq = g.mul(d, d)?;
    let s = g.sum(sq);
    let r = g.sqrt(s);
    Ok(g.scale(r, 1.0 / norm))
}

/// Linear warm-up to `lr_init`, then cosine annealing to `lr_min`.
pub fn cosine_lr(step: usize, total_steps: usize, lr_init: f64, lr_min: f64, warmup_steps: usize) -> f64 {
    if step < warmup_steps {
        return lr_init * step as f64 / warmup_steps as f64;
    }
    let span = total_steps.saturating_sub(warmup_steps);
    if span == 0 {
        return lr_init;
    }
    let progress = ((step - warmup_steps) as f64 / span as f64).min(1.0);
    lr_min + 0.5 * (lr_init - lr_min) * (1.0 + (PI * progress).cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        AdamState {
            step: 0,
            m: params.iter().map(|t| vec![0.0; t.numel()]).collect(),
            v: params.iter().map(|t| vec![0.0; t.numel()]).collect(),
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [Tensor], grads: &[Vec<f64>], state: &mut AdamState, lr: f64, cfg: &AdamConfig) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let g = grads[i][j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            let update = (m[j] / c1) / ((v[j] / c2).sqrt() + cfg.eps);
            *w -= lr * (update + cfg.weight_decay * *w);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_min: f64,
    pub warmup_epochs: usize,
    pub adam: AdamConfig,
    /// Shuffling and validation-split seed.
    pub seed: u64,
    /// Fraction of training samples held out for checkpoint selection.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            epochs: 200,
            lr: 5e-4,
            lr_min: 0.0,
            warmup_epochs: 0,
            adam: AdamConfig::default(),
            seed: 0,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.lr >= 0.0) || !(self.lr_min >= 0.0) {
            return bad("learning rates must be non-negative");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must lie in [0, 1)");
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) || a.weight_decay < 0.0 {
            return bad("Adam needs betas in [0, 1), eps > 0 and weight_decay >= 0");
        }
        Ok(())
    }
}

/// Generator position that resumes a ChaCha stream exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"UCKP";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub epoch: usize,
    pub rng: RngState,
    /// Parameters sorted by name.
    pub params: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn capture(model: &UnisolverModel, train_config: &TrainConfig, epoch: usize, rng: &ChaCha8Rng) -> Self {
        let mut params: Vec<(String, Tensor)> = model
            .params
            .names()
            .iter()
            .cloned()
            .zip(model.params.tensors().iter().cloned())
            .collect();
        params.sort_by(|a, b| a.0.cmp(&b.0));
        Checkpoint {
            model_config: model.config.clone(),
            train_config: train_config.clone(),
            epoch,
            rng: RngState::capture(rng),
            params,
        }
    }

    /// Rebuilds the architecture from the stored configuration and loads the weights.
    pub fn model(&self) -> Result<UnisolverModel> {
        let mut model = UnisolverModel::new(self.model_config.clone())?;
        if model.params.len() != self.params.len() {
            return Err(TrainError::Checkpoint {
                name: "*".into(),
                message: format!("{} tensors stored, architecture has {}", self.params.len(), model.params.len()),
            });
        }
        for (name, t) in &self.params {
            let i = model.params.index_of(name).ok_or_else(|| TrainError::Checkpoint {
                name: name.clone(),
                message: "not part of the architecture".into(),
            })?;
            let slot = &mut model.params.tensors_mut()[i];
            if slot.shape() != t.shape() {
                return Err(TrainError::Checkpoint {
                    name: name.clone(),
                    message: format!("stored shape {:?}, architecture expects {:?}", t.shape(), slot.shape()),
                });
            }
            *slot = t.clone();
        }
        Ok(model)
    }

    /// Errors when `declared` differs from the stored model configuration.
    pub fn check_config(&self, declared: &ModelConfig) -> Result<()> {
        let saved = &self.model_config;
        if saved.alpha != declared.alpha {
            return Err(TrainError::ConfigMismatch {
                field: "alpha",
                saved: saved.alpha.to_string(),
                declared: declared.alpha.to_string(),
            });
        }
        if saved != declared {
            return Err(TrainError::ConfigMismatch {
                field: "model",
                saved: serde_json::to_string(saved)?,
                declared: serde_json::to_string(declared)?,
            });
        }
        Ok(())
    }

    pub fn write_to(&self, out: impl Write) -> Result<()> {
        let mut w = Writer::new(out);
        w.bytes(&CHECKPOINT_MAGIC)?;
        w.u16(CHECKPOINT_VERSION)?;
        w.str(&serde_json::to_string(&self.model_config)?)?;
        w.str(&serde_json::to_string(&self.train_config)?)?;
        w.u64(self.epoch as u64)?;
        w.bytes(&self.rng.seed)?;
        w.u64(self.rng.stream)?;
        w.bytes(&self.rng.word_pos.to_le_bytes())?;
        w.u32(self.params.len() as u32)?;
        for (name, t) in &self.params {
            w.str(name)?;
            w.u8(t.rank() as u8)?;
            for &d in t.shape() {
                w.u64(d as u64)?;
            }
            for &v in t.data() {
                w.f64(v)?;
            }
        }
        Ok(())
    }

    pub fn read_from(input: impl Read) -> Result<Self> {
        let mut r = Reader::new(input);
        r.magic(CHECKPOINT_MAGIC)?;
        let version = r.u16()?;
        if version != CHECKPOINT_VERSION {
            return Err(CodecError::UnsupportedVersion(version).into());
        }
        let model_config = serde_json::from_str(&r.str()?)?;
        let train_config = serde_json::from_str(&r.str()?)?;
        let epoch = r.u64()? as usize;
        let seed = r.bytes::<32>()?;
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.bytes::<16>()?);
        let count = r.u32()? as usize;
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.str()?;
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| r.f64()).collect::<std::result::Result<Vec<_>, _>>()?;
            params.push((name, Tensor::new(shape, data)?));
        }
        r.finish()?;
        if params.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(CodecError::Corrupt("parameter names are not strictly sorted".into()).into());
        }
        Ok(Checkpoint {
            model_config,
            train_config,
            epoch,
            rng: RngState { seed, stream, word_pos },
            params,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(File::create(path).map_err(CodecError::from)?);
        self.write_to(&mut f)?;
        f.flush().map_err(CodecError::from)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path).map_err(CodecError::from)?))
    }
}

/// One epoch of the loss curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sample loss over the epoch's minibatches.
    pub train_loss: f64,
    /// Mean relative L2 on the held-out part, when there is one.
    pub val_loss: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub curve: Vec<EpochRecord>,
    /// Mean relative L2 of the kept checkpoint over every training sample,
    /// held-out part included.
    pub final_loss: f64,
}

/// Per-sample loss and parameter gradients.
fn sample_gradient(model: &UnisolverModel, prep: &Prepared, truth: &Tensor) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut g = Graph::new();
    let p = model.params.bind(&mut g, true);
    let y = model.forward(&mut g, &p, prep)?;
    let loss = relative_l2_loss(&mut g, y, truth)?;
    let mut grads = g.backward(loss)?;
    let value = g.value(loss).item()?;
    let per_param = p
        .iter()
        .zip(model.params.tensors())
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();
    Ok((value, per_param))
}

/// Prepares every sample once; the model output must match the stored target.
pub fn prepare_all(model: &UnisolverModel, samples: &[&Sample]) -> Result<Vec<Prepared>> {
    let out_shape = model.output_shape();
    samples
        .par_iter()
        .map(|s| {
            if s.output.shape() != out_shape {
                return Err(TrainError::Shape {
                    pred: out_shape.to_vec(),
                    truth: s.output.shape().to_vec(),
                });
            }
            Ok(model.prepare(&s.input, &s.components)?)
        })
        .collect()
}

/// Mean relative L2 over prepared samples, summed in order.
fn mean_loss(model: &UnisolverModel, preps: &[Prepared], truths: &[&Tensor]) -> Result<f64> {
    let losses: Vec<f64> = preps
        .par_iter()
        .zip(truths.par_iter())
        .map(|(p, t)| relative_l2(&model.predict_prepared(p)?, t))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Trains on the in-distribution samples of `dataset`. The checkpoint with
/// the lowest validation loss is kept (the last one without a held-out part).
pub fn train(model_config: &ModelConfig, train_config: &TrainConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    let model = UnisolverModel::new(model_config.clone())?;
    train_model(model, train_config, dataset)
}

/// [`train`] starting from an existing model.
pub fn train_model(mut model: UnisolverModel, cfg: &TrainConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    let samples: Vec<&Sample> = dataset.samples.iter().filter(|s| s.split == SplitTag::InDistribution).collect();
    if samples.is_empty() {
        return Err(TrainError::NoSamples);
    }
    let preps = prepare_all(&model, &samples)?;
    let truths: Vec<&Tensor> = samples.iter().map(|s| &s.output).collect();

    let mut split_rng = seeded_rng(cfg.seed, 0);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut split_rng);
    let n_val = ((samples.len() as f64) * cfg.val_fraction).floor() as usize;
    let n_val = n_val.min(samples.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let val_preps: Vec<Prepared> = val_idx.iter().map(|&i| preps[i].clone()).collect();
    let val_truths: Vec<&Tensor> = val_idx.iter().map(|&i| truths[i]).collect();

    let steps_per_epoch = train_idx.len().div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let warmup = steps_per_epoch * cfg.warmup_epochs;
    let mut adam = AdamState::new(model.params.tensors());
    let mut rng = seeded_rng(cfg.seed, 1);
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut last_good = Checkpoint::capture(&model, cfg, 0, &rng);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    let mut epoch_order = train_idx.to_vec();

    for epoch in 1..=cfg.epochs {
        epoch_order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut lr = cfg.lr;
        for batch in epoch_order.chunks(cfg.batch_size) {
            let results: Vec<(f64, Vec<Vec<f64>>)> = batch
                .par_iter()
                .map(|&i| sample_gradient(&model, &preps[i], truths[i]))
                .collect::<Result<_>>()?;
            let mut grads: Vec<Vec<f64>> = model.params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
            let inv = 1.0 / batch.len() as f64;
            for (loss, g) in &results {
                loss_sum += loss;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    for (a, b) in acc.iter_mut().zip(gi) {
                        *a += b * inv;
                    }
                }
            }
            let batch_bad = results.iter().any(|(l, _)| !l.is_finite()) || grads.iter().flatten().any(|g| !g.is_finite());
            if batch_bad {
                return Err(TrainError::NonFinite {
                    epoch,
                    last_good: Box::new(best.map(|b| b.1).unwrap_or(last_good)),
                });
            }
            lr = cosine_lr(step, total, cfg.lr, cfg.lr_min, warmup);
            adam_step(model.params.tensors_mut(), &grads, &mut adam, lr, &cfg.adam);
            step += 1;
        }
        let train_loss = loss_sum / epoch_order.len() as f64;
        let val_loss = if val_preps.is_empty() {
            None
        } else {
            Some(mean_loss(&model, &val_preps, &val_truths)?)
        };
        if !train_loss.is_finite() || val_loss.is_some_and(|v| !v.is_finite()) {
            return Err(TrainError::NonFinite {
                epoch,
                last_good: Box::new(best.map(|b| b.1).unwrap_or(last_good)),
            });
        }
        log::info!("epoch {epoch}: train {train_loss:.6e} val {val_loss:?} lr {lr:.3e}");
        curve.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        last_good = Checkpoint::capture(&model, cfg, epoch, &rng);
        let score = val_loss.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().map_or(true, |(b, _)| score <= *b) {
            best = Some((score, last_good.clone()));
        }
    }

    let checkpoint = best.map(|b| b.1).unwrap_or(last_good);
    let kept = checkpoint.model()?;
    let final_loss = mean_loss(&kept, &preps, &truths)?;
    Ok(TrainOutcome {
        checkpoint,
        curve,
        final_loss,
    })
}

/// Relative L2 of one condition group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupResult {
    pub coefficients: BTreeMap<String, f64>,
    pub split: SplitTag,
    pub samples: usize,
    pub rel_l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub groups: Vec<GroupResult>,
    /// Mean over samples per split tag.
    pub split_means: BTreeMap<SplitTag, f64>,
    /// Mean over every evaluated sample.
    pub mean: f64,
}

/// One group compared against a baseline; absent groups stay `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Promotion {
    pub coefficients: BTreeMap<String, f64>,
    pub split: SplitTag,
    pub ours: Option<f64>,
    pub baseline: Option<f64>,
    pub promotion: Option<f64>,
}

impl EvalReport {
    pub fn group(&self, coefficients: &BTreeMap<String, f64>, split: SplitTag) -> Option<&GroupResult> {
        self.groups.iter().find(|g| &g.coefficients == coefficients && g.split == split)
    }

    /// Promotion per group over the union of both reports' groups.
    pub fn compare(&self, baseline: &EvalReport) -> Vec<Promotion> {
        let mut keys: Vec<(BTreeMap<String, f64>, SplitTag)> =
            self.groups.iter().map(|g| (g.coefficients.clone(), g.split)).collect();
        for g in &baseline.groups {
            if self.group(&g.coefficients, g.split).is_none() {
                keys.push((g.coefficients.clone(), g.split));
            }
        }
        keys.into_iter()
            .map(|(coefficients, split)| {
                let ours = self.group(&coefficients, split).map(|g| g.rel_l2);
                let base = baseline.group(&coefficients, split).map(|g| g.rel_l2);
                let promotion = match (ours, base) {
                    (Some(o), Some(b)) => relative_promotion(o, b).ok(),
                    _ => None,
                };
                Promotion {
                    coefficients,
                    split,
                    ours,
                    baseline: base,
                    promotion,
                }
            })
            .collect()
    }
}

/// Scores `predict(sample)` against every sample's target, grouped by
/// coefficient values and split tag in first-seen order.
pub fn evaluate_predictions<F>(label: &str, dataset: &Dataset, predict: F) -> Result<EvalReport>
where
    F: Fn(&Sample) -> Result<Tensor> + Sync,
{
    let errors: Vec<f64> = dataset
        .samples
        .par_iter()
        .map(|s| relative_l2(&predict(s)?, &s.output))
        .collect::<Result<_>>()?;
    let mut groups: Vec<GroupResult> = Vec::new();
    let mut sums: Vec<f64> = Vec::new();
    let mut split_acc: BTreeMap<SplitTag, (f64, usize)> = BTreeMap::new();
    for (s, &e) in dataset.samples.iter().zip(&errors) {
        let pos = groups
            .iter()
            .position(|g| g.coefficients == s.components.coefficients && g.split == s.split);
        let i = match pos {
            Some(i) => i,
            None => {
                groups.push(GroupResult {
                    coefficients: s.components.coefficients.clone(),
                    split: s.split,
                    samples: 0,
                    rel_l2: 0.0,
                });
                sums.push(0.0);
                groups.len() - 1
            }
        };
        groups[i].samples += 1;
        sums[i] += e;
        let acc = split_acc.entry(s.split).or_insert((0.0, 0));
        acc.0 += e;
        acc.1 += 1;
    }
    for (g, s) in groups.iter_mut().zip(sums) {
        g.rel_l2 = s / g.samples as f64;
    }
    let mean = if errors.is_empty() {
        f64::NAN
    } else {
        errors.iter().sum::<f64>() / errors.len() as f64
    };
    Ok(EvalReport {
        label: label.to_string(),
        groups,
        split_means: split_acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect(),
        mean,
    })
}

pub fn evaluate(label: &str, model: &UnisolverModel, dataset: &Dataset) -> Result<EvalReport> {
    evaluate_predictions(label, dataset, |s| {
        let prep = model.prepare(&s.input, &s.components)?;
        Ok(model.predict_prepared(&prep)?)
    })
}

/// A trained variant in an ablation study.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub label: String,
    pub outcome: TrainOutcome,
    pub report: EvalReport,
}

/// Trains the conditioned model next to the condition-ablated and
/// concatenated-input baselines on the same data and evaluates each on
/// `eval_set`.
pub fn ablation(model_config: &ModelConfig, train_config: &TrainConfig, train_set: &Dataset, eval_set: &Dataset) -> Result<Vec<Variant>> {
    [
        ("conditioned", Conditioning::Full),
        ("ablated", Conditioning::Ablated),
        ("concat-input", Conditioning::ConcatInput),
    ]
    .into_iter()
    .map(|(label, conditioning)| {
        let cfg = ModelConfig {
            conditioning,
            ..model_config.clone()
        };
        let outcome = train(&cfg, train_config, train_set)?;
        let model = outcome.checkpoint.model()?;
        let report = evaluate(label, &model, eval_set)?;
        Ok(Variant {
            label: label.to_string(),
            outcome,
            report,
        })
    })
    .collect()
}
