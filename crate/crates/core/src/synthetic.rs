//! Toy fake/real corpora with a planted signal, for learnability checks.
//!
//! Every fake document includes each marker token independently with
//! probability `p_fake`, every real document with probability `p_real`.
//! Filler words include short ones so short-word removal has an effect.

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, Label};
use crate::error::{Error, Result};
use crate::numerics::rng::{below, stream, stream_rng, unit_f64};

pub const MARKERS: [&str; 5] = ["zephyrine", "quorlax", "vintrobe", "maldrift", "oskerand"];

const FILLER: [&str; 32] = [
    "a", "an", "of", "to", "in", "is", "it", "on", "by", "we", "the", "and", "for", "was", "city",
    "report", "said", "people", "government", "market", "today", "local", "officials", "week",
    "new", "year", "after", "state", "during", "public", "news", "story",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_docs: usize,
    pub p_fake: f64,
    pub p_real: f64,
    pub min_words: usize,
    pub max_words: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_docs: 200,
            p_fake: 0.9,
            p_real: 0.1,
            min_words: 8,
            max_words: 20,
        }
    }
}

/// Half fake, half real (alternating), keyed by `(seed, salt)`.
pub fn synthetic_corpus(name: &str, spec: &SyntheticSpec, seed: u64, salt: u64) -> Result<Corpus> {
    if spec.n_docs == 0 || spec.min_words == 0 || spec.min_words > spec.max_words {
        return Err(Error::arg("synthetic spec needs documents and a valid word range"));
    }
    let mut rng = stream_rng(seed, stream::SYNTHETIC);
    rng.set_word_pos((salt as u128) << 40);
    let docs = (0..spec.n_docs)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Fake } else { Label::Real };
            let p = if label == Label::Fake { spec.p_fake } else { spec.p_real };
            let n = spec.min_words + below(&mut rng, spec.max_words - spec.min_words + 1);
            let mut words: Vec<&str> = (0..n).map(|_| FILLER[below(&mut rng, FILLER.len())]).collect();
            for m in MARKERS {
                if unit_f64(&mut rng) < p {
                    let at = below(&mut rng, words.len() + 1);
                    words.insert(at, m);
                }
            }
            Document {
                text: words.join(" "),
                label,
                source: name.to_string(),
            }
        })
        .collect();
    Ok(Corpus {
        name: name.to_string(),
        docs,
    })
}

/// Accuracy of the best rule on marker counts (predict fake when at least `k` markers).
pub fn marker_rule_accuracy(corpus: &Corpus) -> f64 {
    let counts: Vec<(usize, Label)> = corpus
        .docs
        .iter()
        .map(|d| (d.text.split(' ').filter(|w| MARKERS.contains(w)).count(), d.label))
        .collect();
    (0..=MARKERS.len() + 1)
        .map(|k| {
            let hits = counts
                .iter()
                .filter(|(c, l)| (*c >= k) == (*l == Label::Fake))
                .count();
            hits as f64 / counts.len() as f64
        })
        .fold(0.0, f64::max)
}
