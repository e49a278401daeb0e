//! Transformer encoder: learned token and position embeddings followed by a
//! stack of post-norm blocks, any subset of which may be retained.
//!
//! Every block keeps the activations its backward pass needs in a
//! [`BlockCache`]; gradients are accumulated into the parameters' `grad`
//! buffers in reverse block order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng::{stream, stream_rng, Rng};
use crate::numerics::{
    gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward, xavier_uniform,
    DropoutMask, LayerNormCache, Mode, Parameter, Scalar, Tensor,
};
use crate::textprep::EncodedBatch;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_blocks_total: usize,
    /// Retained blocks, 1-based and strictly increasing.
    pub block_subset: Vec<usize>,
    pub max_seq_len: usize,
    pub dropout_rate: f64,
    pub layer_norm_eps: f64,
}

impl EncoderConfig {
    /// Desk-scale default: 12 blocks of width 64.
    pub fn desk(vocab_size: usize, max_seq_len: usize) -> Self {
        EncoderConfig {
            vocab_size,
            d_model: 64,
            n_heads: 4,
            d_ff: 256,
            n_blocks_total: 12,
            block_subset: (1..=12).collect(),
            max_seq_len,
            dropout_rate: 0.1,
            layer_norm_eps: 1e-12,
        }
    }

    /// Two blocks of width 8, for tests and toy runs.
    pub fn tiny(vocab_size: usize, max_seq_len: usize) -> Self {
        EncoderConfig {
            vocab_size,
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            n_blocks_total: 2,
            block_subset: vec![1, 2],
            max_seq_len,
            dropout_rate: 0.1,
            layer_norm_eps: 1e-5,
        }
    }

    /// BERT-base widths (uncased vocabulary, 512 positions).
    pub fn bert_base() -> Self {
        EncoderConfig {
            vocab_size: 30_522,
            d_model: 768,
            n_heads: 12,
            d_ff: 3072,
            n_blocks_total: 12,
            block_subset: (1..=12).collect(),
            max_seq_len: 512,
            dropout_rate: 0.1,
            layer_norm_eps: 1e-12,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return Err(Error::arg("encoder widths must be positive"));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::arg(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_seq_len < 2 {
            return Err(Error::arg("max_seq_len must be at least 2"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::arg(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        validate_subset(&self.block_subset, self.n_blocks_total)
    }

    /// Same architecture keeping only `subset` (1-based block indices).
    pub fn select_blocks(&self, subset: &[usize]) -> Result<Self> {
        validate_subset(subset, self.n_blocks_total)?;
        Ok(EncoderConfig {
            block_subset: subset.to_vec(),
            ..self.clone()
        })
    }

    pub fn embedding_param_count(&self) -> usize {
        (self.vocab_size + self.max_seq_len) * self.d_model
    }

    pub fn per_block_param_count(&self) -> usize {
        let d = self.d_model;
        let attention = 4 * (d * d + d);
        let norms = 2 * 2 * d;
        let ff = (self.d_ff * d + self.d_ff) + (d * self.d_ff + d);
        attention + norms + ff
    }

    pub fn param_count(&self) -> usize {
        self.embedding_param_count() + self.block_subset.len() * self.per_block_param_count()
    }

    /// Label like `1,3,5` for reports.
    pub fn subset_label(&self) -> String {
        subset_label(&self.block_subset)
    }
}

pub fn subset_label(subset: &[usize]) -> String {
    subset.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn validate_subset(subset: &[usize], total: usize) -> Result<()> {
    if subset.is_empty() {
        return Err(Error::arg("block subset is empty"));
    }
    if subset.iter().any(|&k| k == 0 || k > total) {
        return Err(Error::arg(format!("block subset {subset:?} outside 1..={total}")));
    }
    if subset.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::arg(format!("block subset {subset:?} is not strictly increasing")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams<T = f32> {
    /// 1-based position in the full stack.
    pub index: usize,
    pub wq: Parameter<T>,
    pub bq: Parameter<T>,
    pub wk: Parameter<T>,
    pub bk: Parameter<T>,
    pub wv: Parameter<T>,
    pub bv: Parameter<T>,
    pub wo: Parameter<T>,
    pub bo: Parameter<T>,
    pub ln1_gain: Parameter<T>,
    pub ln1_bias: Parameter<T>,
    pub w1: Parameter<T>,
    pub b1: Parameter<T>,
    pub w2: Parameter<T>,
    pub b2: Parameter<T>,
    pub ln2_gain: Parameter<T>,
    pub ln2_bias: Parameter<T>,
}

impl<T: Scalar> BlockParams<T> {
    /// Weights of block `index` depend only on `(seed, index)`, so a pruned
    /// stack holds exactly the retained blocks of the full one.
    pub fn init(cfg: &EncoderConfig, index: usize, seed: u64) -> Self {
        let d = cfg.d_model;
        let f = cfg.d_ff;
        let mut rng = stream_rng(seed, stream::BLOCK_BASE + index as u64);
        let p = |name: &str, t: Tensor<T>| Parameter::new(format!("encoder.block{index}.{name}"), t);
        BlockParams {
            index,
            wq: p("attn.wq", xavier_uniform(d, d, &mut rng)),
            bq: p("attn.bq", Tensor::zeros(&[d])),
            wk: p("attn.wk", xavier_uniform(d, d, &mut rng)),
            bk: p("attn.bk", Tensor::zeros(&[d])),
            wv: p("attn.wv", xavier_uniform(d, d, &mut rng)),
            bv: p("attn.bv", Tensor::zeros(&[d])),
            wo: p("attn.wo", xavier_uniform(d, d, &mut rng)),
            bo: p("attn.bo", Tensor::zeros(&[d])),
            ln1_gain: p("ln1.gain", Tensor::filled(&[d], T::one())),
            ln1_bias: p("ln1.bias", Tensor::zeros(&[d])),
            w1: p("ff.w1", xavier_uniform(f, d, &mut rng)),
            b1: p("ff.b1", Tensor::zeros(&[f])),
            w2: p("ff.w2", xavier_uniform(d, f, &mut rng)),
            b2: p("ff.b2", Tensor::zeros(&[d])),
            ln2_gain: p("ln2.gain", Tensor::filled(&[d], T::one())),
            ln2_bias: p("ln2.bias", Tensor::zeros(&[d])),
        }
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        vec![
            &self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv, &self.wo, &self.bo,
            &self.ln1_gain, &self.ln1_bias, &self.w1, &self.b1, &self.w2, &self.b2,
            &self.ln2_gain, &self.ln2_bias,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![
            &mut self.wq, &mut self.bq, &mut self.wk, &mut self.bk, &mut self.wv, &mut self.bv,
            &mut self.wo, &mut self.bo, &mut self.ln1_gain, &mut self.ln1_bias, &mut self.w1,
            &mut self.b1, &mut self.w2, &mut self.b2, &mut self.ln2_gain, &mut self.ln2_bias,
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<T = f32> {
    pub token_embedding: Parameter<T>,
    pub position_embedding: Parameter<T>,
    pub blocks: Vec<BlockParams<T>>,
}

impl<T: Scalar> EncoderParams<T> {
    pub fn init(cfg: &EncoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stream_rng(seed, stream::EMBEDDINGS);
        let d = cfg.d_model;
        Ok(EncoderParams {
            token_embedding: Parameter::new(
                "encoder.token_embedding",
                xavier_uniform(cfg.vocab_size, d, &mut rng),
            ),
            position_embedding: Parameter::new(
                "encoder.position_embedding",
                xavier_uniform(cfg.max_seq_len, d, &mut rng),
            ),
            blocks: cfg
                .block_subset
                .iter()
                .map(|&k| BlockParams::init(cfg, k, seed))
                .collect(),
        })
    }

    /// Keeps the blocks listed in `subset`; every one must already be present.
    pub fn select_blocks(&self, subset: &[usize]) -> Result<Self> {
        let blocks = subset
            .iter()
            .map(|k| {
                self.blocks
                    .iter()
                    .find(|b| b.index == *k)
                    .cloned()
                    .ok_or_else(|| Error::arg(format!("block {k} not present")))
            })
            .collect::<Result<_>>()?;
        Ok(EncoderParams {
            token_embedding: self.token_embedding.clone(),
            position_embedding: self.position_embedding.clone(),
            blocks,
        })
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        let mut out = vec![&self.token_embedding, &self.position_embedding];
        for b in &self.blocks {
            out.extend(b.params());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut out = vec![&mut self.token_embedding, &mut self.position_embedding];
        for b in &mut self.blocks {
            out.extend(b.params_mut());
        }
        out
    }

    pub fn scalar_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> EncoderParams<U> {
        let cast_block = |b: &BlockParams<T>| BlockParams {
            index: b.index,
            wq: b.wq.cast(),
            bq: b.bq.cast(),
            wk: b.wk.cast(),
            bk: b.bk.cast(),
            wv: b.wv.cast(),
            bv: b.bv.cast(),
            wo: b.wo.cast(),
            bo: b.bo.cast(),
            ln1_gain: b.ln1_gain.cast(),
            ln1_bias: b.ln1_bias.cast(),
            w1: b.w1.cast(),
            b1: b.b1.cast(),
            w2: b.w2.cast(),
            b2: b.b2.cast(),
            ln2_gain: b.ln2_gain.cast(),
            ln2_bias: b.ln2_bias.cast(),
        };
        EncoderParams {
            token_embedding: self.token_embedding.cast(),
            position_embedding: self.position_embedding.cast(),
            blocks: self.blocks.iter().map(cast_block).collect(),
        }
    }

    fn check_matches(&self, cfg: &EncoderConfig) -> Result<()> {
        let indices: Vec<usize> = self.blocks.iter().map(|b| b.index).collect();
        if indices != cfg.block_subset
            || self.token_embedding.value.shape() != [cfg.vocab_size, cfg.d_model]
            || self.position_embedding.value.shape() != [cfg.max_seq_len, cfg.d_model]
        {
            return Err(Error::Incompatible(format!(
                "encoder parameters do not match config (blocks {indices:?} vs {:?})",
                cfg.block_subset
            )));
        }
        Ok(())
    }
}

/// Token plus position embedding for every position: `[batch, seq, d_model]`.
pub fn embed<T: Scalar>(batch: &EncodedBatch, params: &EncoderParams<T>) -> Result<Tensor<T>> {
    let [vocab, d] = params.token_embedding.value.shape()[..] else {
        unreachable!("embedding is 2-D")
    };
    let max_len = params.position_embedding.value.shape()[0];
    if batch.seq_len > max_len {
        return Err(Error::Shape {
            op: "embed",
            left: vec![batch.batch, batch.seq_len],
            right: vec![max_len, d],
        });
    }
    let e = params.token_embedding.value.data();
    let p = params.position_embedding.value.data();
    let mut out = Vec::with_capacity(batch.ids.len() * d);
    for (n, &id) in batch.ids.iter().enumerate() {
        let id = id as usize;
        if id >= vocab {
            return Err(Error::Index { id, vocab_size: vocab });
        }
        let pos = n % batch.seq_len;
        out.extend((0..d).map(|i| e[id * d + i] + p[pos * d + i]));
    }
    Tensor::from_vec(&[batch.batch, batch.seq_len, d], out)
}

/// Result of multi-head attention over one batch.
#[derive(Clone, Debug)]
pub struct AttentionOutput<T> {
    /// Output projection, `[batch·seq, d_model]`.
    pub out: Vec<T>,
    /// Attention weights, `[batch, heads, seq(query), seq(key)]`; masked keys are exactly 0.
    pub probs: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    ctx: Vec<T>,
}

/// Scaled dot-product multi-head self-attention with padding keys masked out.
pub fn self_attention<T: Scalar>(
    hidden: &[T],
    mask: &[u8],
    batch: usize,
    seq: usize,
    n_heads: usize,
    block: &BlockParams<T>,
) -> Result<AttentionOutput<T>> {
    let d = block.wq.value.shape()[0];
    let dh = d / n_heads;
    if hidden.len() != batch * seq * d || mask.len() != batch * seq {
        return Err(Error::Shape {
            op: "self_attention",
            left: vec![batch, seq, d],
            right: vec![hidden.len(), mask.len()],
        });
    }
    for b in 0..batch {
        if mask[b * seq..(b + 1) * seq].iter().all(|m| *m == 0) {
            return Err(Error::Contract(format!("sample {b} has no unmasked positions")));
        }
    }
    let q = linear(hidden, &block.wq, &block.bq);
    let k = linear(hidden, &block.wk, &block.bk);
    let v = linear(hidden, &block.wv, &block.bv);
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let mut probs = vec![T::zero(); batch * n_heads * seq * seq];
    let mut ctx = vec![T::zero(); batch * seq * d];
    for b in 0..batch {
        let real: Vec<usize> = (0..seq).filter(|&j| mask[b * seq + j] != 0).collect();
        for h in 0..n_heads {
            let off = h * dh;
            for i in 0..seq {
                let qi = &q[(b * seq + i) * d + off..(b * seq + i) * d + off + dh];
                let row = &mut probs[((b * n_heads + h) * seq + i) * seq..((b * n_heads + h) * seq + i + 1) * seq];
                let mut max = T::neg_infinity();
                for &j in &real {
                    let kj = &k[(b * seq + j) * d + off..(b * seq + j) * d + off + dh];
                    let s = qi.iter().zip(kj).fold(T::zero(), |acc, (&x, &y)| acc + x * y) * scale;
                    row[j] = s;
                    max = max.max(s);
                }
                let mut sum = T::zero();
                for &j in &real {
                    row[j] = (row[j] - max).exp();
                    sum = sum + row[j];
                }
                let c = &mut ctx[(b * seq + i) * d + off..(b * seq + i) * d + off + dh];
                for &j in &real {
                    row[j] = row[j] / sum;
                    let vj = &v[(b * seq + j) * d + off..(b * seq + j) * d + off + dh];
                    for (cc, &vv) in c.iter_mut().zip(vj) {
                        *cc = *cc + row[j] * vv;
                    }
                }
            }
        }
    }
    let out = linear(&ctx, &block.wo, &block.bo);
    Ok(AttentionOutput {
        out,
        probs,
        q,
        k,
        v,
        ctx,
    })
}

/// Activations of one block kept for its backward pass.
#[derive(Clone, Debug)]
pub struct BlockCache<T> {
    input: Vec<T>,
    attn: AttentionOutput<T>,
    drop1: Option<DropoutMask<T>>,
    ln1: LayerNormCache<T>,
    h1: Vec<T>,
    ff_pre: Vec<T>,
    ff_act: Vec<T>,
    drop2: Option<DropoutMask<T>>,
    ln2: LayerNormCache<T>,
}

impl<T> BlockCache<T> {
    pub fn attention_probs(&self) -> &[T] {
        &self.attn.probs
    }
}

/// `h1 = LN(x + Drop(Attn(x)))`, `out = LN(h1 + Drop(W2·gelu(W1·h1)))`.
#[allow(clippy::too_many_arguments)]
pub fn encoder_block<T: Scalar>(
    hidden: &[T],
    mask: &[u8],
    batch: usize,
    seq: usize,
    cfg: &EncoderConfig,
    block: &BlockParams<T>,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(Vec<T>, BlockCache<T>)> {
    let d = cfg.d_model;
    let attn = self_attention(hidden, mask, batch, seq, cfg.n_heads, block)?;
    let mut a = attn.out.clone();
    let drop1 = DropoutMask::sample(a.len(), cfg.dropout_rate, mode, rng)?;
    if let Some(m) = &drop1 {
        m.apply(&mut a);
    }
    let r1: Vec<T> = hidden.iter().zip(&a).map(|(&x, &y)| x + y).collect();
    let (h1, ln1) = layer_norm(&r1, d, block.ln1_gain.value.data(), block.ln1_bias.value.data(), cfg.layer_norm_eps);
    let ff_pre = linear(&h1, &block.w1, &block.b1);
    let ff_act: Vec<T> = ff_pre.iter().map(|&x| gelu(x)).collect();
    let mut f = linear(&ff_act, &block.w2, &block.b2);
    let drop2 = DropoutMask::sample(f.len(), cfg.dropout_rate, mode, rng)?;
    if let Some(m) = &drop2 {
        m.apply(&mut f);
    }
    let r2: Vec<T> = h1.iter().zip(&f).map(|(&x, &y)| x + y).collect();
    let (out, ln2) = layer_norm(&r2, d, block.ln2_gain.value.data(), block.ln2_bias.value.data(), cfg.layer_norm_eps);
    Ok((
        out,
        BlockCache {
            input: hidden.to_vec(),
            attn,
            drop1,
            ln1,
            h1,
            ff_pre,
            ff_act,
            drop2,
            ln2,
        },
    ))
}

fn encoder_block_backward<T: Scalar>(
    dout: &[T],
    cache: &BlockCache<T>,
    mask: &[u8],
    batch: usize,
    seq: usize,
    n_heads: usize,
    block: &mut BlockParams<T>,
) -> Vec<T> {
    let d = block.wq.value.shape()[0];
    let dh = d / n_heads;

    let dr2 = layer_norm_backward(
        dout,
        &cache.ln2,
        block.ln2_gain.value.data(),
        block.ln2_gain.grad.data_mut(),
        block.ln2_bias.grad.data_mut(),
    );
    let mut df = dr2.clone();
    if let Some(m) = &cache.drop2 {
        m.apply(&mut df);
    }
    let dact = linear_backward(&cache.ff_act, &df, &mut block.w2, &mut block.b2);
    let dpre: Vec<T> = dact
        .iter()
        .zip(&cache.ff_pre)
        .map(|(&g, &x)| g * gelu_grad(x))
        .collect();
    let dh1_ff = linear_backward(&cache.h1, &dpre, &mut block.w1, &mut block.b1);
    let dh1: Vec<T> = dr2.iter().zip(&dh1_ff).map(|(&a, &b)| a + b).collect();

    let dr1 = layer_norm_backward(
        &dh1,
        &cache.ln1,
        block.ln1_gain.value.data(),
        block.ln1_gain.grad.data_mut(),
        block.ln1_bias.grad.data_mut(),
    );
    let mut da = dr1.clone();
    if let Some(m) = &cache.drop1 {
        m.apply(&mut da);
    }
    let attn = &cache.attn;
    let dctx = linear_backward(&attn.ctx, &da, &mut block.wo, &mut block.bo);

    let scale = T::of(1.0 / (dh as f64).sqrt());
    let mut dq = vec![T::zero(); attn.q.len()];
    let mut dk = vec![T::zero(); attn.k.len()];
    let mut dv = vec![T::zero(); attn.v.len()];
    let mut dp = vec![T::zero(); seq];
    for b in 0..batch {
        let real: Vec<usize> = (0..seq).filter(|&j| mask[b * seq + j] != 0).collect();
        for h in 0..n_heads {
            let off = h * dh;
            for i in 0..seq {
                let p = &attn.probs[((b * n_heads + h) * seq + i) * seq..((b * n_heads + h) * seq + i + 1) * seq];
                let qi_at = (b * seq + i) * d + off;
                let dci = &dctx[qi_at..qi_at + dh];
                let mut weighted = T::zero();
                for &j in &real {
                    let vj_at = (b * seq + j) * d + off;
                    let vj = &attn.v[vj_at..vj_at + dh];
                    dp[j] = dci.iter().zip(vj).fold(T::zero(), |acc, (&x, &y)| acc + x * y);
                    weighted = weighted + p[j] * dp[j];
                    for (g, &c) in dv[vj_at..vj_at + dh].iter_mut().zip(dci) {
                        *g = *g + p[j] * c;
                    }
                }
                for &j in &real {
                    let ds = p[j] * (dp[j] - weighted) * scale;
                    if ds == T::zero() {
                        continue;
                    }
                    let kj_at = (b * seq + j) * d + off;
                    for t in 0..dh {
                        dq[qi_at + t] = dq[qi_at + t] + ds * attn.k[kj_at + t];
                        dk[kj_at + t] = dk[kj_at + t] + ds * attn.q[qi_at + t];
                    }
                }
            }
        }
    }
    let mut dx = dr1;
    for (dproj, w, bias) in [
        (&dq, &mut block.wq, &mut block.bq),
        (&dk, &mut block.wk, &mut block.bk),
        (&dv, &mut block.wv, &mut block.bv),
    ] {
        let part = linear_backward(&cache.input, dproj, w, bias);
        dx.iter_mut().zip(&part).for_each(|(a, &b)| *a = *a + b);
    }
    dx
}

/// Everything [`encoder_backward`] needs from a forward pass.
#[derive(Clone, Debug)]
pub struct EncoderCache<T> {
    ids: Vec<u32>,
    mask: Vec<u8>,
    batch: usize,
    seq: usize,
    pub blocks: Vec<BlockCache<T>>,
}

/// Embeds, runs the retained blocks in ascending order and returns the
/// position-0 hidden state of every sample, `[batch, d_model]`.
pub fn encode_sequence<T: Scalar>(
    batch: &EncodedBatch,
    params: &EncoderParams<T>,
    cfg: &EncoderConfig,
    mode: Mode,
    rng: &mut Rng,
    keep_cache: bool,
) -> Result<(Tensor<T>, Option<EncoderCache<T>>)> {
    params.check_matches(cfg)?;
    let d = cfg.d_model;
    let mut hidden = embed(batch, params)?.into_data();
    let mut caches = Vec::new();
    for block in &params.blocks {
        let (out, cache) = encoder_block(&hidden, &batch.mask, batch.batch, batch.seq_len, cfg, block, mode, rng)?;
        hidden = out;
        if keep_cache {
            caches.push(cache);
        }
    }
    let mut pooled = Vec::with_capacity(batch.batch * d);
    for b in 0..batch.batch {
        let at = b * batch.seq_len * d;
        pooled.extend_from_slice(&hidden[at..at + d]);
    }
    let cache = keep_cache.then(|| EncoderCache {
        ids: batch.ids.clone(),
        mask: batch.mask.clone(),
        batch: batch.batch,
        seq: batch.seq_len,
        blocks: caches,
    });
    Ok((Tensor::from_vec(&[batch.batch, d], pooled)?, cache))
}

/// Accumulates encoder gradients given `d loss / d pooled`.
pub fn encoder_backward<T: Scalar>(
    d_pooled: &Tensor<T>,
    cache: &EncoderCache<T>,
    params: &mut EncoderParams<T>,
    cfg: &EncoderConfig,
) {
    let d = cfg.d_model;
    let (batch, seq) = (cache.batch, cache.seq);
    let mut grad = vec![T::zero(); batch * seq * d];
    for b in 0..batch {
        grad[b * seq * d..b * seq * d + d].copy_from_slice(&d_pooled.data()[b * d..(b + 1) * d]);
    }
    for (block, bc) in params.blocks.iter_mut().zip(&cache.blocks).rev() {
        grad = encoder_block_backward(&grad, bc, &cache.mask, batch, seq, cfg.n_heads, block);
    }
    let de = params.token_embedding.grad.data_mut();
    for (n, &id) in cache.ids.iter().enumerate() {
        let row = &grad[n * d..(n + 1) * d];
        for i in 0..d {
            de[id as usize * d + i] = de[id as usize * d + i] + row[i];
        }
    }
    let dp = params.position_embedding.grad.data_mut();
    for (n, row) in grad.chunks(d).enumerate() {
        let pos = n % seq;
        for i in 0..d {
            dp[pos * d + i] = dp[pos * d + i] + row[i];
        }
    }
}
