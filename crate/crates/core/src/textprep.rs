//! Tokenization, the short-word rule, vocabulary construction and
//! fixed-length encoding.
//!
//! The tokenizer lowercases, turns every non-alphanumeric character into a
//! separator and splits on whitespace. It is deliberately simple; there is no
//! subword model.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, Document, Label};
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const N_SPECIAL: usize = 3;
const SPECIAL_TOKENS: [&str; N_SPECIAL] = ["[PAD]", "[UNK]", "[CLS]"];

/// Tokenizer identity recorded in run metadata.
pub const TOKENIZER: &str = "lowercase + non-alphanumeric split (no WordPiece)";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrepConfig {
    /// Tokens with fewer characters are removed when `remove_short` is set.
    pub min_word_len: usize,
    pub max_seq_len: usize,
    pub lowercase: bool,
    pub strip_nonalnum: bool,
    pub remove_short: bool,
}

impl PrepConfig {
    /// Raw input, 200 positions.
    pub fn without_preprocessing() -> Self {
        PrepConfig {
            min_word_len: 3,
            max_seq_len: 200,
            lowercase: true,
            strip_nonalnum: true,
            remove_short: false,
        }
    }

    /// Short words removed, 120 positions.
    pub fn with_preprocessing() -> Self {
        PrepConfig {
            max_seq_len: 120,
            remove_short: true,
            ..Self::without_preprocessing()
        }
    }

    /// Alternate pairing: 300 positions raw, 175 with short words removed.
    pub fn alternate_presets() -> (Self, Self) {
        (
            PrepConfig {
                max_seq_len: 300,
                ..Self::without_preprocessing()
            },
            PrepConfig {
                max_seq_len: 175,
                ..Self::with_preprocessing()
            },
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_word_len < 1 {
            return Err(Error::arg("min_word_len must be at least 1"));
        }
        if self.max_seq_len < 2 {
            return Err(Error::arg("max_seq_len must be at least 2"));
        }
        Ok(())
    }
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self::with_preprocessing()
    }
}

/// Lowercases, replaces non-alphanumerics with spaces and splits on whitespace.
pub fn normalize(text: &str, cfg: &PrepConfig) -> Vec<String> {
    let mut s = if cfg.lowercase {
        text.to_lowercase()
    } else {
        text.to_string()
    };
    if cfg.strip_nonalnum {
        s = s
            .chars()
            .map(|c| if c.is_alphanumeric() { c } else { ' ' })
            .collect();
    }
    s.split_whitespace().map(str::to_string).collect()
}

/// Keeps tokens with at least `min_word_len` characters, in order.
pub fn remove_short_words(tokens: &[String], min_word_len: usize) -> Vec<String> {
    tokens
        .iter()
        .filter(|t| t.chars().count() >= min_word_len)
        .cloned()
        .collect()
}

/// Full token stream for one text under `cfg`.
pub fn tokenize(text: &str, cfg: &PrepConfig) -> Vec<String> {
    let tokens = normalize(text, cfg);
    if cfg.remove_short {
        remove_short_words(&tokens, cfg.min_word_len)
    } else {
        tokens
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    /// Includes the special tokens at ids 0..3.
    id_to_token: Vec<String>,
    pub max_size: usize,
    pub min_freq: usize,
    /// Hash of the preprocessing settings the vocabulary was built under.
    pub config_hash: String,
    /// Set when the corpus produced no tokens at all.
    pub empty_source: bool,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>, max_size: usize, min_freq: usize, config_hash: String) -> Self {
        let mut id_to_token: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(tokens);
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .skip(N_SPECIAL)
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary {
            token_to_id,
            id_to_token,
            max_size,
            min_freq,
            config_hash,
            empty_source: false,
        }
    }

    /// Total size including special tokens.
    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.len() == N_SPECIAL
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    /// Header line, then one token per line; line `k` after the header is id `k + 3`.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "#vocab v1 config_hash={} max_size={} min_freq={}\n",
            self.config_hash, self.max_size, self.min_freq
        );
        for t in &self.id_to_token[N_SPECIAL..] {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Format {
            what: "vocabulary",
            message: m.to_string(),
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("missing header"))?;
        let fields: HashMap<&str, &str> = header
            .strip_prefix("#vocab v1")
            .ok_or_else(|| bad("unrecognized header"))?
            .split_whitespace()
            .filter_map(|kv| kv.split_once('='))
            .collect();
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(&format!("missing {k}")));
        let max_size = get("max_size")?.parse().map_err(|_| bad("max_size"))?;
        let min_freq = get("min_freq")?.parse().map_err(|_| bad("min_freq"))?;
        let config_hash = get("config_hash")?.to_string();
        let tokens: Vec<String> = lines.map(str::to_string).collect();
        let mut v = Self::from_tokens(tokens, max_size, min_freq, config_hash);
        if v.token_to_id.len() + N_SPECIAL != v.id_to_token.len() {
            return Err(bad("duplicate token"));
        }
        v.empty_source = v.is_empty();
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Short content hash identifying this exact vocabulary.
    pub fn fingerprint(&self) -> String {
        short_hash(self.to_text().as_bytes())
    }
}

pub fn short_hash(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}

fn prep_hash(cfg: &PrepConfig, max_size: usize, min_freq: usize) -> String {
    let json = serde_json::to_string(&(cfg, max_size, min_freq)).expect("config serializes");
    short_hash(json.as_bytes())
}

/// Ranks tokens by (frequency desc, token asc) and keeps the top `max_size`
/// with frequency at least `min_freq`.
pub fn build_vocab(corpus: &Corpus, cfg: &PrepConfig, max_size: usize, min_freq: usize) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::arg("cannot build a vocabulary from an empty corpus"));
    }
    let mut freq: HashMap<String, usize> = HashMap::new();
    for doc in &corpus.docs {
        for t in tokenize(&doc.text, cfg) {
            *freq.entry(t).or_default() += 1;
        }
    }
    let empty_source = freq.is_empty();
    let mut ranked: Vec<(String, usize)> = freq
        .into_iter()
        .filter(|(_, n)| *n >= min_freq.max(1))
        .collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size);
    let mut vocab = Vocabulary::from_tokens(
        ranked.into_iter().map(|(t, _)| t).collect(),
        max_size,
        min_freq,
        prep_hash(cfg, max_size, min_freq),
    );
    vocab.empty_source = empty_source;
    Ok(vocab)
}

/// One document as a fixed-length id sequence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedSample {
    pub ids: Vec<u32>,
    /// 1 for real positions (including CLS), 0 for padding.
    pub mask: Vec<u8>,
    pub label: Label,
    pub true_length: usize,
}

/// `[CLS] + ids`, truncated to `max_seq_len` and right-padded.
pub fn encode(doc: &Document, vocab: &Vocabulary, cfg: &PrepConfig) -> EncodedSample {
    let tokens = tokenize(&doc.text, cfg);
    encode_tokens(&tokens, doc.label, vocab, cfg.max_seq_len)
}

fn encode_tokens(tokens: &[String], label: Label, vocab: &Vocabulary, max_seq_len: usize) -> EncodedSample {
    let mut ids = Vec::with_capacity(max_seq_len);
    ids.push(CLS);
    ids.extend(
        tokens
            .iter()
            .take(max_seq_len.saturating_sub(1))
            .map(|t| vocab.id_or_unk(t)),
    );
    let true_length = ids.len();
    ids.resize(max_seq_len, PAD);
    let mask = (0..max_seq_len).map(|i| u8::from(i < true_length)).collect();
    EncodedSample {
        ids,
        mask,
        label,
        true_length,
    }
}

pub fn encode_corpus(corpus: &Corpus, vocab: &Vocabulary, cfg: &PrepConfig) -> Vec<EncodedSample> {
    corpus.docs.iter().map(|d| encode(d, vocab, cfg)).collect()
}

/// Row-major batch of samples ready for the model.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedBatch {
    pub ids: Vec<u32>,
    pub mask: Vec<u8>,
    pub labels: Vec<usize>,
    pub batch: usize,
    pub seq_len: usize,
}

impl EncodedBatch {
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a EncodedSample>) -> Result<Self> {
        let mut out = EncodedBatch {
            ids: Vec::new(),
            mask: Vec::new(),
            labels: Vec::new(),
            batch: 0,
            seq_len: 0,
        };
        for s in samples {
            if out.batch == 0 {
                out.seq_len = s.ids.len();
            } else if s.ids.len() != out.seq_len {
                return Err(Error::Shape {
                    op: "batch",
                    left: vec![out.seq_len],
                    right: vec![s.ids.len()],
                });
            }
            out.ids.extend_from_slice(&s.ids);
            out.mask.extend_from_slice(&s.mask);
            out.labels.push(s.label.index());
            out.batch += 1;
        }
        Ok(out)
    }

    pub fn row_mask(&self, b: usize) -> &[u8] {
        &self.mask[b * self.seq_len..(b + 1) * self.seq_len]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthSummary {
    pub mean: f64,
    pub max: usize,
    /// Nearest-rank 95th percentile.
    pub p95: usize,
}

impl LengthSummary {
    fn of(counts: &[usize]) -> Self {
        let mut sorted = counts.to_vec();
        sorted.sort_unstable();
        let n = sorted.len();
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        LengthSummary {
            mean: counts.iter().sum::<usize>() as f64 / n as f64,
            max: *sorted.last().unwrap(),
            p95: sorted[rank - 1],
        }
    }
}

/// Pre-truncation token counts with and without the short-word rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub without_removal: LengthSummary,
    pub with_removal: LengthSummary,
    pub min_word_len: usize,
    pub per_doc_without: Vec<usize>,
    pub per_doc_with: Vec<usize>,
}

pub fn seq_length_stats(corpus: &Corpus, cfg: &PrepConfig) -> Result<LengthStats> {
    if corpus.is_empty() {
        return Err(Error::arg("length statistics need a nonempty corpus"));
    }
    let mut without = Vec::with_capacity(corpus.len());
    let mut with = Vec::with_capacity(corpus.len());
    for doc in &corpus.docs {
        let tokens = normalize(&doc.text, cfg);
        with.push(remove_short_words(&tokens, cfg.min_word_len).len());
        without.push(tokens.len());
    }
    Ok(LengthStats {
        without_removal: LengthSummary::of(&without),
        with_removal: LengthSummary::of(&with),
        min_word_len: cfg.min_word_len,
        per_doc_without: without,
        per_doc_with: with,
    })
}

/// Encoded split persisted by the prep command.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSet {
    pub vocab_fingerprint: String,
    pub max_seq_len: usize,
    pub samples: Vec<EncodedSample>,
}

impl EncodedSet {
    /// Header line, then `label<TAB>id id ...` per sample (padding omitted).
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "#encoded v1 vocab={} max_seq_len={} count={}\n",
            self.vocab_fingerprint,
            self.max_seq_len,
            self.samples.len()
        );
        for s in &self.samples {
            let _ = write!(out, "{}\t", s.label);
            let ids: Vec<String> = s.ids[..s.true_length].iter().map(u32::to_string).collect();
            out.push_str(&ids.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Format {
            what: "encoded corpus",
            message: m,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("missing header".into()))?;
        let fields: HashMap<&str, &str> = header
            .strip_prefix("#encoded v1")
            .ok_or_else(|| bad("unrecognized header".into()))?
            .split_whitespace()
            .filter_map(|kv| kv.split_once('='))
            .collect();
        let vocab_fingerprint = fields.get("vocab").ok_or_else(|| bad("missing vocab".into()))?.to_string();
        let max_seq_len: usize = fields
            .get("max_seq_len")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("missing max_seq_len".into()))?;
        let mut samples = Vec::new();
        for (n, line) in lines.enumerate() {
            let (label, ids) = line
                .split_once('\t')
                .ok_or_else(|| bad(format!("line {}: missing tab", n + 2)))?;
            let label: u8 = label.parse().map_err(|_| bad(format!("line {}: label", n + 2)))?;
            let label = Label::try_from(label)?;
            let mut ids: Vec<u32> = ids
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| bad(format!("line {}: id `{t}`", n + 2))))
                .collect::<Result<_>>()?;
            if ids.is_empty() || ids[0] != CLS || ids.len() > max_seq_len {
                return Err(bad(format!("line {}: bad id sequence", n + 2)));
            }
            let true_length = ids.len();
            ids.resize(max_seq_len, PAD);
            let mask = (0..max_seq_len).map(|i| u8::from(i < true_length)).collect();
            samples.push(EncodedSample {
                ids,
                mask,
                label,
                true_length,
            });
        }
        Ok(EncodedSet {
            vocab_fingerprint,
            max_seq_len,
            samples,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
