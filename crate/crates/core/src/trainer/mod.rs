//! Minibatch training: NLL loss, backward, global-norm clipping and Adam on
//! every trainable parameter, then per-epoch validation with best-validation
//! selection.
//!
//! A frozen encoder is a fixed feature map, so its pooled outputs are
//! computed once per sample and only the head is trained on them.

mod checkpoint;
mod cost;

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointKind, CheckpointMeta, FORMAT_VERSION, MAGIC};
pub use cost::{estimate_cost, CostEstimate};

use crate::classifier::predict;
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, confusion, Confusion, Metrics, POSITIVE_CLASS};
use crate::model::Model;
use crate::numerics::rng::{permutation, stream, stream_rng, Rng, RngState, RNG_ALGORITHM};
use crate::numerics::{adam_step, clip_global_norm, global_norm, AdamConfig, AdamState, Mode, Tensor, GELU_VARIANT};
use crate::textprep::{short_hash, EncodedBatch, EncodedSample, TOKENIZER};
use crate::classifier::HeadConfig;
use crate::encoder::EncoderConfig;

/// Batch sizes swept in the per-dataset tables.
pub const BATCH_SIZES: [usize; 7] = [16, 32, 64, 128, 256, 512, 1024];

/// Samples per forward pass during evaluation and feature extraction.
const EVAL_CHUNK: usize = 256;

pub const SHARED_SPLIT_WARNING: &str =
    "validation split is also the reported test split: model selection and reporting share data";

/// What happens after an epoch that does not improve validation accuracy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    /// Restore the best weights, optimizer state and batch-norm statistics.
    Rollback,
    /// Keep training from the current weights; only remember the best.
    BestOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub clip: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout_rate: f64,
    pub seed: u64,
    pub freeze_encoder: bool,
    pub max_seq_len: usize,
    pub preprocessing_enabled: bool,
    pub selection: Selection,
    /// Abort on a non-finite loss or gradient norm.
    pub checked: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            lr: adam.lr,
            clip: 1.0,
            epochs: 50,
            batch_size: 32,
            dropout_rate: 0.1,
            seed: 0,
            freeze_encoder: true,
            max_seq_len: 120,
            preprocessing_enabled: true,
            selection: Selection::Rollback,
            checked: true,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.eps,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr.is_nan() || self.lr <= 0.0 || self.clip.is_nan() || self.clip <= 0.0 {
            return Err(Error::arg("lr and clip must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::arg("epochs must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::arg(format!("batch size {} below 2", self.batch_size)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::arg(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

/// Short hash of the full architecture and training configuration.
pub fn config_hash(encoder: &EncoderConfig, head: &HeadConfig, train: &TrainConfig) -> String {
    let json = serde_json::to_string(&(encoder, head, train)).expect("configs serialize");
    short_hash(json.as_bytes())
}

/// Index batches for one epoch, reshuffled per `(seed, epoch)`. A trailing
/// batch of one sample is merged into the previous batch.
pub fn batch_iterator(n: usize, batch_size: usize, epoch: u64, seed: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1);
    let order = permutation(n, seed, stream::SHUFFLE, epoch);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() >= 2 && batches.last().is_some_and(|b| b.len() < 2) {
        let last = batches.pop().expect("nonempty");
        batches.last_mut().expect("nonempty").extend(last);
    }
    batches
}

/// Samples plus, for a frozen encoder, their cached pooled vectors.
pub struct PreparedSet<'a> {
    samples: &'a [EncodedSample],
    pooled: Option<Tensor<f32>>,
}

impl<'a> PreparedSet<'a> {
    pub fn prepare(model: &Model<f32>, samples: &'a [EncodedSample]) -> Result<Self> {
        let pooled = if model.freeze_encoder && !samples.is_empty() {
            let d = model.encoder_cfg.d_model;
            let mut rng = stream_rng(0, stream::DROPOUT);
            let mut data = Vec::with_capacity(samples.len() * d);
            for chunk in samples.chunks(EVAL_CHUNK) {
                let batch = EncodedBatch::from_samples(chunk)?;
                data.extend(model.pooled(&batch, &mut rng)?.into_data());
            }
            Some(Tensor::from_vec(&[samples.len(), d], data)?)
        } else {
            None
        };
        Ok(PreparedSet { samples, pooled })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn labels(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.samples[i].label.index()).collect()
    }

    fn gather_pooled(pooled: &Tensor<f32>, idx: &[usize]) -> Tensor<f32> {
        let d = pooled.last_dim();
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            out.extend_from_slice(&pooled.data()[i * d..(i + 1) * d]);
        }
        Tensor::from_vec(&[idx.len(), d], out).expect("rows of width d")
    }

    fn batch(&self, idx: &[usize]) -> Result<EncodedBatch> {
        EncodedBatch::from_samples(idx.iter().map(|&i| &self.samples[i]))
    }
}

fn predictions(model: &mut Model<f32>, set: &PreparedSet) -> Result<Vec<usize>> {
    let mut rng = stream_rng(0, stream::DROPOUT);
    let all: Vec<usize> = (0..set.len()).collect();
    let mut out = Vec::with_capacity(set.len());
    for idx in all.chunks(EVAL_CHUNK) {
        let lp = match &set.pooled {
            Some(p) => model.head_log_probs(&PreparedSet::gather_pooled(p, idx), &mut rng)?,
            None => model.log_probs(&set.batch(idx)?, &mut rng)?,
        };
        out.extend(predict(&lp));
    }
    Ok(out)
}

/// Confusion counts and metrics of `model` in eval mode.
pub fn evaluate_detailed(model: &Model<f32>, samples: &[EncodedSample]) -> Result<(Confusion, Metrics)> {
    if samples.is_empty() {
        return Err(Error::arg("cannot evaluate on an empty corpus"));
    }
    let mut m = model.clone();
    let set = PreparedSet::prepare(&m, samples)?;
    evaluate_prepared(&mut m, &set)
}

pub fn evaluate(model: &Model<f32>, samples: &[EncodedSample]) -> Result<Metrics> {
    Ok(evaluate_detailed(model, samples)?.1)
}

fn evaluate_prepared(model: &mut Model<f32>, set: &PreparedSet) -> Result<(Confusion, Metrics)> {
    if set.is_empty() {
        return Err(Error::arg("cannot evaluate on an empty corpus"));
    }
    let preds = predictions(model, set)?;
    let c = confusion(&preds, &set.labels(&(0..set.len()).collect::<Vec<_>>()))?;
    Ok((c, compute_metrics(&c)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean of the per-batch mean losses.
    pub train_loss: f64,
    pub val: Metrics,
    pub max_grad_norm: f64,
    /// Largest global norm after clipping; never above the clip value.
    pub max_clipped_norm: f64,
    pub clipped_steps: usize,
    pub steps: usize,
    #[serde(default)]
    pub seconds: f64,
    pub improved: bool,
    pub restored: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub config_hash: String,
    pub vocab_fingerprint: Option<String>,
    pub tokenizer: String,
    pub gelu_variant: String,
    pub rng_algorithm: String,
    pub selection: Selection,
    pub freeze_encoder: bool,
    pub preprocessing_enabled: bool,
    pub max_seq_len: usize,
    pub positive_class: String,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val: Metrics,
    pub total_seconds: f64,
    pub meta: RunMeta,
}

impl TrainReport {
    pub fn loss_trace(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.train_loss).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub const SUMMARY_HEADER: &'static str =
        "config_hash,batch_size_epochs,best_epoch,accuracy,precision,recall,f1,total_seconds";

    /// One delimited row matching [`TrainReport::SUMMARY_HEADER`].
    pub fn summary_row(&self, batch_size: usize) -> String {
        let m = &self.best_val;
        format!(
            "{},{}x{},{},{},{},{},{},{:.3}",
            self.meta.config_hash,
            batch_size,
            self.records.len(),
            self.best_epoch,
            m.accuracy,
            m.precision,
            m.recall,
            m.f1,
            self.total_seconds
        )
    }
}

#[derive(Clone, Debug)]
struct Snapshot {
    epoch: usize,
    val: Metrics,
    tensors: BTreeMap<String, Tensor<f32>>,
    adam: Vec<AdamState<f32>>,
}

/// Resumable training state.
pub struct Trainer {
    pub model: Model<f32>,
    pub cfg: TrainConfig,
    pub vocab_fingerprint: Option<String>,
    adam: Vec<AdamState<f32>>,
    best: Option<Snapshot>,
    epochs_completed: usize,
    dropout_rng: Rng,
    records: Vec<EpochRecord>,
}

fn named_map(model: &Model<f32>) -> BTreeMap<String, Tensor<f32>> {
    model.named_tensors().into_iter().map(|(n, t)| (n, t.clone())).collect()
}

impl Trainer {
    /// Applies the run's dropout rate and freeze flag to `model`.
    pub fn new(mut model: Model<f32>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.max_seq_len > model.encoder_cfg.max_seq_len {
            return Err(Error::Incompatible(format!(
                "sequence length {} exceeds the encoder's {} positions",
                cfg.max_seq_len, model.encoder_cfg.max_seq_len
            )));
        }
        model.freeze_encoder = cfg.freeze_encoder;
        model.encoder_cfg.dropout_rate = cfg.dropout_rate;
        model.head_cfg.dropout_rate = cfg.dropout_rate;
        let adam_cfg = cfg.adam();
        let adam = model
            .trainable_params_mut()
            .iter()
            .map(|p| AdamState::new(p.value.shape(), adam_cfg))
            .collect();
        Ok(Trainer {
            dropout_rng: stream_rng(cfg.seed, stream::DROPOUT),
            model,
            cfg,
            vocab_fingerprint: None,
            adam,
            best: None,
            epochs_completed: 0,
            records: Vec::new(),
        })
    }

    pub fn epochs_completed(&self) -> usize {
        self.epochs_completed
    }

    pub fn is_done(&self) -> bool {
        self.epochs_completed >= self.cfg.epochs
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn config_hash(&self) -> String {
        config_hash(&self.model.encoder_cfg, &self.model.head_cfg, &self.cfg)
    }

    pub fn prepare<'a>(&self, samples: &'a [EncodedSample]) -> Result<PreparedSet<'a>> {
        PreparedSet::prepare(&self.model, samples)
    }

    /// One pass over `train` followed by validation and best-state bookkeeping.
    pub fn run_epoch(&mut self, train: &PreparedSet, val: &PreparedSet) -> Result<EpochRecord> {
        if train.len() < 2 {
            return Err(Error::arg(format!("training set of {} samples; need at least 2", train.len())));
        }
        if val.is_empty() {
            return Err(Error::arg("validation set is empty"));
        }
        let epoch = self.epochs_completed + 1;
        let start = Instant::now();
        let batches = batch_iterator(train.len(), self.cfg.batch_size, epoch as u64, self.cfg.seed);
        let mut loss_sum = 0.0;
        let (mut max_norm, mut max_clipped, mut clipped_steps) = (0.0f64, 0.0f64, 0);
        for (step, idx) in batches.iter().enumerate() {
            let labels = train.labels(idx);
            let loss = match &train.pooled {
                Some(p) => self.model.head_loss_and_backward(
                    &PreparedSet::gather_pooled(p, idx),
                    &labels,
                    Mode::Train,
                    &mut self.dropout_rng,
                )?,
                None => self
                    .model
                    .loss_and_backward(&train.batch(idx)?, Mode::Train, &mut self.dropout_rng)?,
            };
            let loss = f64::from(loss);
            if self.cfg.checked && !loss.is_finite() {
                return Err(Error::NonFinite {
                    name: format!("training loss at epoch {epoch}, step {}", step + 1),
                });
            }
            let mut params = self.model.trainable_params_mut();
            let pre = clip_global_norm(&mut params, self.cfg.clip)?;
            if self.cfg.checked && !pre.is_finite() {
                return Err(Error::NonFinite {
                    name: format!("gradient norm at epoch {epoch}, step {}", step + 1),
                });
            }
            if pre > self.cfg.clip {
                clipped_steps += 1;
            }
            max_norm = max_norm.max(pre);
            max_clipped = max_clipped.max(global_norm(&params));
            for (p, s) in params.iter_mut().zip(&mut self.adam) {
                adam_step(p, s)?;
            }
            loss_sum += loss;
        }
        let (_, val_metrics) = evaluate_prepared(&mut self.model, val)?;
        let improved = self.best.as_ref().is_none_or(|b| val_metrics.accuracy > b.val.accuracy);
        let mut restored = false;
        if improved {
            self.best = Some(Snapshot {
                epoch,
                val: val_metrics,
                tensors: named_map(&self.model),
                adam: self.adam.clone(),
            });
        } else if self.cfg.selection == Selection::Rollback {
            let best = self.best.as_ref().expect("set after the first epoch");
            self.model.assign_named(&best.tensors)?;
            self.adam = best.adam.clone();
            restored = true;
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches.len() as f64,
            val: val_metrics,
            max_grad_norm: max_norm,
            max_clipped_norm: max_clipped,
            clipped_steps,
            steps: batches.len(),
            seconds: start.elapsed().as_secs_f64(),
            improved,
            restored,
        };
        self.records.push(record.clone());
        self.epochs_completed = epoch;
        Ok(record)
    }

    /// Runs the remaining epochs.
    pub fn run(&mut self, train: &PreparedSet, val: &PreparedSet) -> Result<()> {
        while !self.is_done() {
            self.run_epoch(train, val)?;
        }
        Ok(())
    }

    fn best(&self) -> Result<&Snapshot> {
        self.best
            .as_ref()
            .ok_or_else(|| Error::Contract("no completed epoch yet".into()))
    }

    pub fn report(&self) -> Result<TrainReport> {
        let best = self.best()?;
        Ok(TrainReport {
            records: self.records.clone(),
            best_epoch: best.epoch,
            best_val: best.val,
            total_seconds: self.records.iter().map(|r| r.seconds).sum(),
            meta: RunMeta {
                config_hash: self.config_hash(),
                vocab_fingerprint: self.vocab_fingerprint.clone(),
                tokenizer: TOKENIZER.into(),
                gelu_variant: GELU_VARIANT.into(),
                rng_algorithm: RNG_ALGORITHM.into(),
                selection: self.cfg.selection,
                freeze_encoder: self.cfg.freeze_encoder,
                preprocessing_enabled: self.cfg.preprocessing_enabled,
                max_seq_len: self.cfg.max_seq_len,
                positive_class: POSITIVE_CLASS.into(),
                warnings: vec![SHARED_SPLIT_WARNING.into()],
            },
        })
    }

    /// The model holding the best-validation weights.
    pub fn best_model(&self) -> Result<Model<f32>> {
        let mut m = self.model.clone();
        m.assign_named(&self.best()?.tensors)?;
        Ok(m)
    }

    fn trainable_names(&mut self) -> Vec<String> {
        self.model.trainable_params_mut().iter().map(|p| p.name.clone()).collect()
    }

    fn meta(&self, kind: CheckpointKind, adam_t: u64) -> CheckpointMeta {
        CheckpointMeta {
            kind,
            encoder: self.model.encoder_cfg.clone(),
            head: self.model.head_cfg.clone(),
            train: self.cfg.clone(),
            config_hash: self.config_hash(),
            vocab_fingerprint: self.vocab_fingerprint.clone(),
            epochs_completed: self.epochs_completed,
            best_epoch: self.best.as_ref().map(|b| b.epoch),
            best_val: self.best.as_ref().map(|b| b.val),
            adam_t,
            best_adam_t: self.best.as_ref().map(|b| b.adam.first().map_or(0, |s| s.t)),
            dropout_rng: RngState::capture(self.cfg.seed, &self.dropout_rng),
            records: self
                .records
                .iter()
                .map(|r| EpochRecord { seconds: 0.0, ..r.clone() })
                .collect(),
        }
    }

    fn insert_adam(tensors: &mut BTreeMap<String, Tensor<f32>>, prefix: &str, names: &[String], adam: &[AdamState<f32>]) {
        for (name, s) in names.iter().zip(adam) {
            tensors.insert(format!("{prefix}adam.m/{name}"), s.m.clone());
            tensors.insert(format!("{prefix}adam.v/{name}"), s.v.clone());
        }
    }

    /// Full in-progress state; [`Trainer::from_checkpoint`] continues it exactly.
    pub fn checkpoint(&mut self) -> Checkpoint {
        let names = self.trainable_names();
        let mut tensors = named_map(&self.model);
        Self::insert_adam(&mut tensors, "", &names, &self.adam);
        if let Some(best) = &self.best {
            for (n, t) in &best.tensors {
                tensors.insert(format!("best/{n}"), t.clone());
            }
            Self::insert_adam(&mut tensors, "best/", &names, &best.adam);
        }
        let t = self.adam.first().map_or(0, |s| s.t);
        Checkpoint {
            meta: self.meta(CheckpointKind::Resume, t),
            tensors,
        }
    }

    /// Best-validation weights and their optimizer state.
    pub fn best_checkpoint(&mut self) -> Result<Checkpoint> {
        let names = self.trainable_names();
        let best = self.best()?.clone();
        let mut tensors = best.tensors.clone();
        Self::insert_adam(&mut tensors, "", &names, &best.adam);
        let t = best.adam.first().map_or(0, |s| s.t);
        Ok(Checkpoint {
            meta: self.meta(CheckpointKind::Best, t),
            tensors,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta = &ckpt.meta;
        if meta.kind != CheckpointKind::Resume {
            return Err(Error::Incompatible(
                "only resume checkpoints can continue training".into(),
            ));
        }
        let model = model_from_checkpoint(ckpt)?;
        let mut trainer = Trainer::new(model, meta.train.clone())?;
        if trainer.config_hash() != meta.config_hash {
            return Err(Error::Incompatible("checkpoint config hash does not match its configuration".into()));
        }
        let names = trainer.trainable_names();
        let take = |key: String| {
            ckpt.tensors
                .get(&key)
                .cloned()
                .ok_or_else(|| Error::Incompatible(format!("checkpoint lacks {key}")))
        };
        let load_adam = |prefix: &str, t: u64| -> Result<Vec<AdamState<f32>>> {
            names
                .iter()
                .map(|n| {
                    Ok(AdamState {
                        m: take(format!("{prefix}adam.m/{n}"))?,
                        v: take(format!("{prefix}adam.v/{n}"))?,
                        t,
                        config: meta.train.adam(),
                    })
                })
                .collect()
        };
        trainer.adam = load_adam("", meta.adam_t)?;
        if let (Some(epoch), Some(val)) = (meta.best_epoch, meta.best_val) {
            let tensors = named_map(&trainer.model)
                .into_keys()
                .map(|n| Ok((n.clone(), take(format!("best/{n}"))?)))
                .collect::<Result<_>>()?;
            trainer.best = Some(Snapshot {
                epoch,
                val,
                tensors,
                adam: load_adam("best/", meta.best_adam_t.unwrap_or(0))?,
            });
        }
        trainer.dropout_rng = meta
            .dropout_rng
            .restore()
            .ok_or_else(|| Error::Integrity("unreadable RNG position".into()))?;
        trainer.records = meta.records.clone();
        trainer.epochs_completed = meta.epochs_completed;
        trainer.vocab_fingerprint = meta.vocab_fingerprint.clone();
        Ok(trainer)
    }
}

/// Rebuilds the model stored in a checkpoint.
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<Model<f32>> {
    let meta = &ckpt.meta;
    let mut model = Model::init(meta.encoder.clone(), meta.head.clone(), meta.train.seed, meta.train.freeze_encoder)?;
    model.assign_named(&ckpt.tensors)?;
    Ok(model)
}

/// Trains `model` to completion and returns the best-validation checkpoint and the report.
pub fn train(
    model: Model<f32>,
    train_set: &[EncodedSample],
    validation: &[EncodedSample],
    cfg: &TrainConfig,
) -> Result<(Checkpoint, TrainReport)> {
    let (ckpt, report, _) = train_full(model, train_set, validation, cfg, None)?;
    Ok((ckpt, report))
}

/// [`train`] that also returns the best model and records a vocabulary fingerprint.
pub fn train_full(
    model: Model<f32>,
    train_set: &[EncodedSample],
    validation: &[EncodedSample],
    cfg: &TrainConfig,
    vocab_fingerprint: Option<String>,
) -> Result<(Checkpoint, TrainReport, Model<f32>)> {
    if validation.is_empty() {
        return Err(Error::arg("validation set is empty"));
    }
    let mut trainer = Trainer::new(model, cfg.clone())?;
    trainer.vocab_fingerprint = vocab_fingerprint;
    let tr = trainer.prepare(train_set)?;
    let va = trainer.prepare(validation)?;
    trainer.run(&tr, &va)?;
    Ok((trainer.best_checkpoint()?, trainer.report()?, trainer.best_model()?))
}
