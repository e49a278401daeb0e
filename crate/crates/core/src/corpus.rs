//! Labeled document collections: delimited-file ingestion, deterministic
//! splits and concatenation of datasets.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng::{self, stream};

/// Binary class. The positive class for metrics is [`Label::Fake`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Real = 0,
    Fake = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Label::Real),
            1 => Ok(Label::Fake),
            other => Err(Error::arg(format!("label {other} is not 0 or 1"))),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", *self as u8)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub text: String,
    pub label: Label,
    /// Identifier of the dataset the document came from.
    pub source: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub name: String,
    pub docs: Vec<Document>,
}

impl Corpus {
    pub fn new(name: impl Into<String>, docs: Vec<Document>) -> Self {
        Corpus {
            name: name.into(),
            docs,
        }
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Count of documents per label, `[real, fake]`.
    pub fn label_histogram(&self) -> [usize; 2] {
        let mut h = [0; 2];
        for d in &self.docs {
            h[d.label.index()] += 1;
        }
        h
    }
}

/// How a delimited file's columns map onto [`Document`] fields.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    /// Concatenated with a single space, in this order.
    pub text_columns: Vec<String>,
    pub label_column: String,
    /// Raw label value (trimmed) to class.
    pub label_mapping: BTreeMap<String, Label>,
    #[serde(default = "default_delimiter")]
    pub delimiter: u8,
}

fn default_delimiter() -> u8 {
    b','
}

impl ColumnMap {
    pub fn new(text_columns: &[&str], label_column: &str, mapping: &[(&str, Label)]) -> Self {
        ColumnMap {
            text_columns: text_columns.iter().map(|s| s.to_string()).collect(),
            label_column: label_column.to_string(),
            label_mapping: mapping.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            delimiter: b',',
        }
    }

    pub fn with_delimiter(mut self, delimiter: u8) -> Self {
        self.delimiter = delimiter;
        self
    }
}

/// Summary written next to every loaded corpus.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub name: String,
    pub path: PathBuf,
    pub rows_read: usize,
    /// Rows whose concatenated text was empty.
    pub rows_dropped: usize,
    pub real: usize,
    pub fake: usize,
}

/// Reads a delimited file with a header row into a corpus.
pub fn load_dataset(path: &Path, map: &ColumnMap, name: &str) -> Result<(Corpus, LoadReport)> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(map.delimiter)
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    if headers.is_empty() {
        return Err(Error::EmptyCorpus {
            path: path.to_path_buf(),
        });
    }
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema {
                path: path.to_path_buf(),
                column: name.to_string(),
            })
    };
    let text_idx = map
        .text_columns
        .iter()
        .map(|c| column(c))
        .collect::<Result<Vec<_>>>()?;
    let label_idx = column(&map.label_column)?;

    let mut docs = Vec::new();
    let mut rows_read = 0;
    let mut rows_dropped = 0;
    for (i, record) in reader.records().enumerate() {
        // row numbers count the header as row 1
        let row = i + 2;
        let record = record.map_err(csv_err)?;
        rows_read += 1;
        let raw_label = record.get(label_idx).unwrap_or("").trim();
        let label = *map.label_mapping.get(raw_label).ok_or_else(|| Error::Data {
            path: path.to_path_buf(),
            row,
            message: format!("unmappable label `{raw_label}`"),
        })?;
        let text = text_idx
            .iter()
            .map(|&c| record.get(c).unwrap_or("").trim())
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join(" ");
        if text.is_empty() {
            rows_dropped += 1;
            continue;
        }
        docs.push(Document {
            text,
            label,
            source: name.to_string(),
        });
    }
    if rows_read == 0 {
        return Err(Error::EmptyCorpus {
            path: path.to_path_buf(),
        });
    }
    let corpus = Corpus::new(name, docs);
    let [real, fake] = corpus.label_histogram();
    let report = LoadReport {
        name: name.to_string(),
        path: path.to_path_buf(),
        rows_read,
        rows_dropped,
        real,
        fake,
    };
    Ok((corpus, report))
}

/// Train/test partition of a corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitCorpus {
    pub train: Corpus,
    pub test: Corpus,
    pub ratio: f64,
    pub seed: u64,
    /// Original indices of the training documents, in split order.
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

impl SplitCorpus {
    /// Wraps separately supplied train and test files without re-splitting.
    pub fn predefined(train: Corpus, test: Corpus) -> Self {
        let n_train = train.len();
        let total = n_train + test.len();
        SplitCorpus {
            ratio: if total == 0 { 0.0 } else { n_train as f64 / total as f64 },
            seed: 0,
            train_indices: (0..n_train).collect(),
            test_indices: (n_train..total).collect(),
            train,
            test,
        }
    }
}

/// Seeded shuffle, then the first `floor(ratio·n)` documents train.
pub fn split(corpus: &Corpus, ratio: f64, seed: u64) -> Result<SplitCorpus> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::arg(format!("split ratio {ratio} outside (0, 1)")));
    }
    let n = corpus.len();
    if n < 2 {
        return Err(Error::DegenerateSplit { len: n });
    }
    let order = rng::permutation(n, seed, stream::SPLIT, 0);
    let n_train = (ratio * n as f64).floor() as usize;
    let (train_idx, test_idx) = order.split_at(n_train);
    let pick = |idx: &[usize], suffix: &str| {
        Corpus::new(
            format!("{}.{suffix}", corpus.name),
            idx.iter().map(|&i| corpus.docs[i].clone()).collect(),
        )
    };
    Ok(SplitCorpus {
        train: pick(train_idx, "train"),
        test: pick(test_idx, "test"),
        ratio,
        seed,
        train_indices: train_idx.to_vec(),
        test_indices: test_idx.to_vec(),
    })
}

/// Concatenates corpora in order, keeping every document's source tag.
pub fn combine(corpora: &[&Corpus]) -> Result<Corpus> {
    match corpora {
        [] => Err(Error::arg("combine needs at least one corpus")),
        [only] => Ok((*only).clone()),
        many => Ok(Corpus::new(
            many.iter().map(|c| c.name.as_str()).collect::<Vec<_>>().join("+"),
            many.iter().flat_map(|c| c.docs.iter().cloned()).collect(),
        )),
    }
}

/// Combines train parts with train parts and test parts with test parts.
pub fn combine_splits(splits: &[&SplitCorpus]) -> Result<SplitCorpus> {
    let trains: Vec<&Corpus> = splits.iter().map(|s| &s.train).collect();
    let tests: Vec<&Corpus> = splits.iter().map(|s| &s.test).collect();
    Ok(SplitCorpus::predefined(combine(&trains)?, combine(&tests)?))
}
