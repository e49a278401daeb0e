//! Encoder plus classifier head as one trainable unit.

use std::collections::BTreeMap;

use crate::classifier::{head_backward, head_forward, HeadCache, HeadConfig, HeadParams};
use crate::encoder::{encode_sequence, encoder_backward, EncoderCache, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::numerics::rng::{stream, Rng};
use crate::numerics::{nll_loss, HasParams, Mode, Parameter, Scalar, Tensor};
use crate::textprep::EncodedBatch;

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T = f32> {
    pub encoder_cfg: EncoderConfig,
    pub head_cfg: HeadConfig,
    pub encoder: EncoderParams<T>,
    pub head: HeadParams<T>,
    /// A frozen encoder runs deterministically (no dropout) and receives no updates.
    pub freeze_encoder: bool,
}

/// Forward activations for [`Model::backward`].
#[derive(Clone, Debug)]
pub struct ModelCache<T> {
    encoder: Option<EncoderCache<T>>,
    head: HeadCache<T>,
}

impl<T: Scalar> Model<T> {
    /// Fresh encoder and head, both keyed by `seed`.
    pub fn init(encoder_cfg: EncoderConfig, head_cfg: HeadConfig, seed: u64, freeze_encoder: bool) -> Result<Self> {
        let encoder = EncoderParams::init(&encoder_cfg, seed)?;
        Self::with_encoder(encoder_cfg, encoder, head_cfg, seed, stream::HEAD, freeze_encoder)
    }

    /// Existing encoder weights with a fresh head from `(seed, head_stream)`.
    pub fn with_encoder(
        encoder_cfg: EncoderConfig,
        encoder: EncoderParams<T>,
        head_cfg: HeadConfig,
        seed: u64,
        head_stream: u64,
        freeze_encoder: bool,
    ) -> Result<Self> {
        encoder_cfg.validate()?;
        if head_cfg.d_in != encoder_cfg.d_model {
            return Err(Error::Incompatible(format!(
                "head input {} differs from encoder width {}",
                head_cfg.d_in, encoder_cfg.d_model
            )));
        }
        let head = HeadParams::init(&head_cfg, seed, head_stream)?;
        Ok(Model {
            encoder_cfg,
            head_cfg,
            encoder,
            head,
            freeze_encoder,
        })
    }

    pub fn forward(&mut self, batch: &EncodedBatch, mode: Mode, rng: &mut Rng) -> Result<(Tensor<T>, ModelCache<T>)> {
        let enc_mode = if self.freeze_encoder { Mode::Eval } else { mode };
        let keep = !self.freeze_encoder && mode == Mode::Train;
        let (pooled, enc_cache) = encode_sequence(batch, &self.encoder, &self.encoder_cfg, enc_mode, rng, keep)?;
        let (log_probs, head_cache) = head_forward(&pooled, &mut self.head, self.head_cfg.dropout_rate, mode, rng)?;
        Ok((
            log_probs,
            ModelCache {
                encoder: enc_cache,
                head: head_cache,
            },
        ))
    }

    /// Like [`Model::forward`] but always keeps the encoder cache, so the
    /// encoder can be differentiated in eval mode too.
    pub fn forward_for_grad(&mut self, batch: &EncodedBatch, mode: Mode, rng: &mut Rng) -> Result<(Tensor<T>, ModelCache<T>)> {
        let enc_mode = if self.freeze_encoder { Mode::Eval } else { mode };
        let (pooled, enc_cache) = encode_sequence(batch, &self.encoder, &self.encoder_cfg, enc_mode, rng, !self.freeze_encoder)?;
        let (log_probs, head_cache) = head_forward(&pooled, &mut self.head, self.head_cfg.dropout_rate, mode, rng)?;
        Ok((
            log_probs,
            ModelCache {
                encoder: enc_cache,
                head: head_cache,
            },
        ))
    }

    /// Accumulates gradients of every trainable parameter.
    pub fn backward(&mut self, d_log_probs: &Tensor<T>, cache: &ModelCache<T>) {
        let d_pooled = head_backward(d_log_probs, &cache.head, &mut self.head);
        if let (false, Some(enc)) = (self.freeze_encoder, &cache.encoder) {
            encoder_backward(&d_pooled, enc, &mut self.encoder, &self.encoder_cfg);
        }
    }

    pub fn zero_grad(&mut self) {
        for p in self.all_params_mut() {
            p.zero_grad();
        }
    }

    /// Zeroes gradients, runs forward and backward, returns the mean NLL.
    pub fn loss_and_backward(&mut self, batch: &EncodedBatch, mode: Mode, rng: &mut Rng) -> Result<T> {
        self.zero_grad();
        let (lp, cache) = self.forward_for_grad(batch, mode, rng)?;
        let (loss, grad) = nll_loss(&lp, &batch.labels)?;
        self.backward(&grad, &cache);
        Ok(loss)
    }

    /// Mean NLL without touching gradients or running statistics.
    pub fn eval_loss(&self, batch: &EncodedBatch, rng: &mut Rng) -> Result<T> {
        let mut copy = self.clone();
        let (lp, _) = copy.forward(batch, Mode::Eval, rng)?;
        Ok(nll_loss(&lp, &batch.labels)?.0)
    }

    /// [`Model::eval_loss`] plus the head's ReLU pattern, for kink-aware gradient checks.
    pub fn eval_loss_with_pattern(&self, batch: &EncodedBatch, rng: &mut Rng) -> Result<(T, Vec<bool>)> {
        let mut copy = self.clone();
        let (lp, cache) = copy.forward(batch, Mode::Eval, rng)?;
        Ok((nll_loss(&lp, &batch.labels)?.0, cache.head.relu_pattern()))
    }

    /// Eval-mode encoder output `[batch, d_model]`. Per-sample results do not
    /// depend on the rest of the batch.
    pub fn pooled(&self, batch: &EncodedBatch, rng: &mut Rng) -> Result<Tensor<T>> {
        Ok(encode_sequence(batch, &self.encoder, &self.encoder_cfg, Mode::Eval, rng, false)?.0)
    }

    /// Head-only step on precomputed encoder outputs; zeroes head gradients first.
    pub fn head_loss_and_backward(&mut self, pooled: &Tensor<T>, labels: &[usize], mode: Mode, rng: &mut Rng) -> Result<T> {
        for p in self.head.params_mut() {
            p.zero_grad();
        }
        let (lp, cache) = head_forward(pooled, &mut self.head, self.head_cfg.dropout_rate, mode, rng)?;
        let (loss, grad) = nll_loss(&lp, labels)?;
        head_backward(&grad, &cache, &mut self.head);
        Ok(loss)
    }

    /// Eval-mode head on precomputed encoder outputs.
    pub fn head_log_probs(&mut self, pooled: &Tensor<T>, rng: &mut Rng) -> Result<Tensor<T>> {
        Ok(head_forward(pooled, &mut self.head, self.head_cfg.dropout_rate, Mode::Eval, rng)?.0)
    }

    /// Eval-mode log-probabilities.
    pub fn log_probs(&mut self, batch: &EncodedBatch, rng: &mut Rng) -> Result<Tensor<T>> {
        Ok(self.forward(batch, Mode::Eval, rng)?.0)
    }

    /// Parameters that training updates: the head, plus the encoder unless frozen.
    pub fn trainable_params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut out = Vec::new();
        if !self.freeze_encoder {
            out.extend(self.encoder.params_mut());
        }
        out.extend(self.head.params_mut());
        out
    }

    fn all_params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut out = self.encoder.params_mut();
        out.extend(self.head.params_mut());
        out
    }

    pub fn param_count(&self) -> usize {
        self.encoder_cfg.param_count() + self.head_cfg.param_count()
    }

    /// Every parameter and buffer by name, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = self
            .encoder
            .params()
            .into_iter()
            .chain(self.head.params())
            .map(|p| (p.name.clone(), &p.value))
            .collect();
        out.extend(self.head.buffers());
        out
    }

    /// Overwrites every parameter and buffer from `tensors`; all names must be present with matching shapes.
    pub fn assign_named(&mut self, tensors: &BTreeMap<String, Tensor<T>>) -> Result<()> {
        let mut targets: Vec<(String, &mut Tensor<T>)> = self
            .encoder
            .params_mut()
            .into_iter()
            .map(|p| (p.name.clone(), &mut p.value))
            .collect();
        targets.extend(self.head.named_tensors_mut());
        for (name, slot) in targets {
            let src = tensors
                .get(&name)
                .ok_or_else(|| Error::Incompatible(format!("missing tensor {name}")))?;
            if src.shape() != slot.shape() {
                return Err(Error::Incompatible(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    src.shape(),
                    slot.shape()
                )));
            }
            slot.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            encoder_cfg: self.encoder_cfg.clone(),
            head_cfg: self.head_cfg.clone(),
            encoder: self.encoder.cast(),
            head: self.head.cast(),
            freeze_encoder: self.freeze_encoder,
        }
    }
}

impl<T: Scalar> HasParams<T> for Model<T> {
    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.trainable_params_mut()
    }
}
