//! Two-phase orchestration: a shared-configuration search across datasets
//! under an accuracy-deficit constraint, joint training on the combined
//! corpus, plus the preprocessing comparison and block ablation harnesses.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::classifier::HeadConfig;
use crate::corpus::{combine, combine_splits, SplitCorpus};
use crate::encoder::{subset_label, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::metrics::Metrics;
use crate::model::Model;
use crate::numerics::rng::stream;
use crate::textprep::{build_vocab, encode_corpus, EncodedSample, PrepConfig, Vocabulary};
use crate::trainer::{estimate_cost, train_full, Checkpoint, TrainConfig, TrainReport};

/// Best-known accuracy per dataset with a citation string.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineTable {
    pub entries: BTreeMap<String, (f64, String)>,
}

impl BaselineTable {
    /// Best prior results for the three public datasets.
    pub fn published() -> Self {
        let mut entries = BTreeMap::new();
        entries.insert("dataset1".into(), (1.000, "Hakkak et al.".into()));
        entries.insert("dataset2".into(), (0.92, "Decision Trees".into()));
        entries.insert("dataset3".into(), (0.93, "O'Brien et al.".into()));
        BaselineTable { entries }
    }

    /// The same baseline for every named dataset.
    pub fn uniform<S: AsRef<str>>(names: &[S], accuracy: f64, source: &str) -> Result<Self> {
        let table = BaselineTable {
            entries: names
                .iter()
                .map(|n| (n.as_ref().to_string(), (accuracy, source.to_string())))
                .collect(),
        };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (acc, _)) in &self.entries {
            if !(*acc > 0.0 && *acc <= 1.0) {
                return Err(Error::arg(format!("baseline for {name} is {acc}, outside (0, 1]")));
            }
        }
        Ok(())
    }

    pub fn get(&self, dataset: &str) -> Result<f64> {
        self.entries
            .get(dataset)
            .map(|e| e.0)
            .ok_or_else(|| Error::arg(format!("no baseline for dataset {dataset}")))
    }

    /// `dataset,accuracy,source` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["dataset", "accuracy", "source"]).expect("in-memory write");
        for (name, (acc, src)) in &self.entries {
            w.write_record([name.as_str(), &acc.to_string(), src.as_str()])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
    }

    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let mut entries = BTreeMap::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::Csv {
                path: path.to_path_buf(),
                source: e,
            })?;
            let bad = |msg: &str| Error::Data {
                path: path.to_path_buf(),
                row: i + 2,
                message: msg.to_string(),
            };
            let name = rec.get(0).ok_or_else(|| bad("missing dataset"))?.trim();
            let acc: f64 = rec
                .get(1)
                .ok_or_else(|| bad("missing accuracy"))?
                .trim()
                .parse()
                .map_err(|_| bad("accuracy is not a number"))?;
            let src = rec.get(2).unwrap_or("").trim();
            entries.insert(name.to_string(), (acc, src.to_string()));
        }
        let table = BaselineTable { entries };
        table.validate()?;
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, path)
    }
}

/// `baseline − accuracy ≤ threshold`.
pub fn check_acceptable(accuracy: f64, baseline: f64, threshold: f64) -> Result<bool> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(Error::arg(format!("threshold {threshold} must be positive")));
    }
    if !(0.0..=1.0).contains(&accuracy) || !(baseline > 0.0 && baseline <= 1.0) {
        return Err(Error::arg(format!("accuracy {accuracy} or baseline {baseline} outside [0, 1]")));
    }
    Ok(baseline - accuracy <= threshold)
}

/// One named dataset with its train/test split.
#[derive(Clone, Debug)]
pub struct DatasetInput {
    pub name: String,
    pub split: SplitCorpus,
}

/// Architecture, preprocessing and hyperparameters shared by every model of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharedConfig {
    /// `vocab_size` and `max_seq_len` are filled in from the vocabulary and `prep`.
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
    /// `batch_size` is replaced by each swept value.
    pub train: TrainConfig,
    pub prep: PrepConfig,
    pub vocab_max_size: usize,
    pub vocab_min_freq: usize,
}

impl SharedConfig {
    pub fn validate(&self) -> Result<()> {
        self.prep.validate()?;
        self.train.validate()?;
        self.head.validate()?;
        if self.head.d_in != self.encoder.d_model {
            return Err(Error::Incompatible(format!(
                "head input {} differs from encoder width {}",
                self.head.d_in, self.encoder.d_model
            )));
        }
        Ok(())
    }

    /// Configurations for a given vocabulary and batch size.
    pub fn resolve(&self, vocab_len: usize, batch_size: usize) -> (EncoderConfig, HeadConfig, TrainConfig) {
        let encoder = EncoderConfig {
            vocab_size: vocab_len,
            max_seq_len: self.prep.max_seq_len,
            dropout_rate: self.train.dropout_rate,
            ..self.encoder.clone()
        };
        let head = HeadConfig {
            dropout_rate: self.train.dropout_rate,
            ..self.head.clone()
        };
        let train = TrainConfig {
            batch_size,
            max_seq_len: self.prep.max_seq_len,
            preprocessing_enabled: self.prep.remove_short,
            ..self.train.clone()
        };
        (encoder, head, train)
    }

    /// Multiply-accumulates per sample per training step.
    pub fn cost_per_sample(&self) -> f64 {
        let (e, h, _) = self.resolve(self.encoder.vocab_size.max(1), 1);
        estimate_cost(&e, &h, self.prep.max_seq_len, 1).total
    }

    /// Vocabulary over the union of the training splits.
    pub fn build_vocab(&self, datasets: &[DatasetInput]) -> Result<Vocabulary> {
        let trains: Vec<_> = datasets.iter().map(|d| &d.split.train).collect();
        build_vocab(&combine(&trains)?, &self.prep, self.vocab_max_size, self.vocab_min_freq)
    }
}

struct EncodedSplit {
    train: Vec<EncodedSample>,
    test: Vec<EncodedSample>,
}

fn encode_split(split: &SplitCorpus, vocab: &Vocabulary, prep: &PrepConfig) -> EncodedSplit {
    EncodedSplit {
        train: encode_corpus(&split.train, vocab, prep),
        test: encode_corpus(&split.test, vocab, prep),
    }
}

/// One trained (dataset, batch size) model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub candidate: usize,
    pub dataset: String,
    pub batch_size: usize,
    pub metrics: Metrics,
    pub best_epoch: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetOutcome {
    pub dataset: String,
    pub batch_size: usize,
    pub metrics: Metrics,
    pub baseline: f64,
    /// `baseline − accuracy`; negative when the baseline is exceeded.
    pub deficit: f64,
    pub acceptable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub index: usize,
    pub config: SharedConfig,
    pub outcomes: Vec<DatasetOutcome>,
    pub feasible: bool,
    pub mean_accuracy: f64,
    pub cost_per_sample: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PhaseOneResult {
    pub accepted: bool,
    pub threshold: f64,
    pub selected: Option<usize>,
    pub candidates: Vec<CandidateResult>,
    pub cells: Vec<Cell>,
    /// Smallest deficit reached per dataset over all candidates.
    pub min_deficits: BTreeMap<String, f64>,
    #[serde(skip)]
    transfer: Option<(usize, EncoderParams<f32>, Vocabulary)>,
}

impl PhaseOneResult {
    pub fn selected_candidate(&self) -> Option<&CandidateResult> {
        self.selected.map(|i| &self.candidates[i])
    }

    /// Encoder of the most accurate cell of the selected candidate, and its vocabulary.
    pub fn transfer_encoder(&self) -> Option<(&EncoderParams<f32>, &Vocabulary)> {
        self.transfer.as_ref().map(|(_, e, v)| (e, v))
    }

    /// Cells of one candidate, in training order.
    pub fn cells_of(&self, candidate: usize) -> Vec<&Cell> {
        self.cells.iter().filter(|c| c.candidate == candidate).collect()
    }
}

/// Trains every candidate on every dataset at every batch size and selects
/// the feasible candidate with the highest mean accuracy (ties: lower cost,
/// then grid order). Infeasibility is a result, not an error.
pub fn phase_one(
    datasets: &[DatasetInput],
    grid: &[SharedConfig],
    batch_sizes: &[usize],
    baselines: &BaselineTable,
    threshold: f64,
) -> Result<PhaseOneResult> {
    if grid.is_empty() || batch_sizes.is_empty() || datasets.is_empty() {
        return Err(Error::arg("phase one needs datasets, candidates and batch sizes"));
    }
    check_acceptable(1.0, 1.0, threshold)?;
    let mut candidates = Vec::new();
    let mut cells = Vec::new();
    let mut best_encoders = Vec::new();
    for (ci, cand) in grid.iter().enumerate() {
        cand.validate()?;
        let vocab = cand.build_vocab(datasets)?;
        let mut outcomes = Vec::new();
        let mut best_cell: Option<(f64, EncoderParams<f32>)> = None;
        for ds in datasets {
            let enc = encode_split(&ds.split, &vocab, &cand.prep);
            let mut chosen: Option<(usize, Metrics)> = None;
            for &bs in batch_sizes {
                let (e, h, t) = cand.resolve(vocab.len(), bs);
                let model = Model::init(e, h, t.seed, t.freeze_encoder)?;
                let start = Instant::now();
                let (_, report, best_model) =
                    train_full(model, &enc.train, &enc.test, &t, Some(vocab.fingerprint()))?;
                cells.push(Cell {
                    candidate: ci,
                    dataset: ds.name.clone(),
                    batch_size: bs,
                    metrics: report.best_val,
                    best_epoch: report.best_epoch,
                    seconds: start.elapsed().as_secs_f64(),
                });
                let acc = report.best_val.accuracy;
                if chosen.as_ref().is_none_or(|(_, m)| acc > m.accuracy) {
                    chosen = Some((bs, report.best_val));
                }
                if best_cell.as_ref().is_none_or(|(a, _)| acc > *a) {
                    best_cell = Some((acc, best_model.encoder));
                }
            }
            let (batch_size, metrics) = chosen.expect("batch sizes nonempty");
            let baseline = baselines.get(&ds.name)?;
            outcomes.push(DatasetOutcome {
                dataset: ds.name.clone(),
                batch_size,
                metrics,
                baseline,
                deficit: baseline - metrics.accuracy,
                acceptable: check_acceptable(metrics.accuracy, baseline, threshold)?,
            });
        }
        let mean_accuracy = outcomes.iter().map(|o| o.metrics.accuracy).sum::<f64>() / outcomes.len() as f64;
        let (e, ..) = cand.resolve(vocab.len(), 1);
        candidates.push(CandidateResult {
            index: ci,
            config: SharedConfig { encoder: e, ..cand.clone() },
            feasible: outcomes.iter().all(|o| o.acceptable),
            outcomes,
            mean_accuracy,
            cost_per_sample: 0.0,
        });
        let last = candidates.last_mut().expect("just pushed");
        last.cost_per_sample = last.config.cost_per_sample();
        best_encoders.push((best_cell.expect("cells trained").1, vocab));
    }
    let selected = candidates
        .iter()
        .filter(|c| c.feasible)
        .fold(None::<&CandidateResult>, |best, c| match best {
            Some(b)
                if b.mean_accuracy > c.mean_accuracy
                    || (b.mean_accuracy == c.mean_accuracy && b.cost_per_sample <= c.cost_per_sample) =>
            {
                Some(b)
            }
            _ => Some(c),
        })
        .map(|c| c.index);
    let mut min_deficits = BTreeMap::new();
    for c in &candidates {
        for o in &c.outcomes {
            let e = min_deficits.entry(o.dataset.clone()).or_insert(f64::INFINITY);
            *e = o.deficit.min(*e);
        }
    }
    let transfer = selected.map(|i| {
        let (enc, vocab) = best_encoders.swap_remove(i);
        (i, enc, vocab)
    });
    Ok(PhaseOneResult {
        accepted: selected.is_some(),
        threshold,
        selected,
        candidates,
        cells,
        min_deficits,
        transfer,
    })
}

/// Encoder weights for joint training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderInit {
    /// Reuse the encoder of the best phase-one model.
    Transfer,
    /// Initialize from the run seed.
    Fresh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub batch_size: usize,
    pub metrics: Metrics,
    pub best_epoch: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct PhaseTwoResult {
    pub rows: Vec<SweepRow>,
    /// Batch size of the most accurate row (ties: smaller batch).
    pub best_batch_size: usize,
    pub checkpoint: Checkpoint,
    pub report: TrainReport,
    pub vocab: Vocabulary,
    pub encoder_init: EncoderInit,
    /// Mean encoded length of the combined training split.
    pub mean_true_length: f64,
    pub seconds: f64,
}

/// Joint training on the concatenated splits with a freshly initialized head.
/// `encoder` supplies transferred weights and their vocabulary; `None` means fresh.
pub fn phase_two(
    datasets: &[DatasetInput],
    shared: &SharedConfig,
    encoder: Option<(&EncoderParams<f32>, &Vocabulary)>,
    batch_sizes: &[usize],
) -> Result<PhaseTwoResult> {
    if batch_sizes.is_empty() || datasets.is_empty() {
        return Err(Error::arg("phase two needs datasets and batch sizes"));
    }
    shared.validate()?;
    let start = Instant::now();
    let splits: Vec<&SplitCorpus> = datasets.iter().map(|d| &d.split).collect();
    let combined = combine_splits(&splits)?;
    let vocab = match encoder {
        Some((_, v)) => v.clone(),
        None => shared.build_vocab(datasets)?,
    };
    let enc = encode_split(&combined, &vocab, &shared.prep);
    let mean_true_length =
        enc.train.iter().map(|s| s.true_length as f64).sum::<f64>() / enc.train.len().max(1) as f64;
    let mut rows = Vec::new();
    let mut best: Option<(f64, Checkpoint, TrainReport)> = None;
    for &bs in batch_sizes {
        let (e, h, t) = shared.resolve(vocab.len(), bs);
        let params = match encoder {
            Some((p, _)) => p.clone(),
            None => EncoderParams::init(&e, t.seed)?,
        };
        let model = Model::with_encoder(e, params, h, t.seed, stream::HEAD_PHASE_TWO, t.freeze_encoder)?;
        let cell_start = Instant::now();
        let (ckpt, report, _) = train_full(model, &enc.train, &enc.test, &t, Some(vocab.fingerprint()))?;
        rows.push(SweepRow {
            batch_size: bs,
            metrics: report.best_val,
            best_epoch: report.best_epoch,
            seconds: cell_start.elapsed().as_secs_f64(),
        });
        if best.as_ref().is_none_or(|(a, ..)| report.best_val.accuracy > *a) {
            best = Some((report.best_val.accuracy, ckpt, report));
        }
    }
    let (_, checkpoint, report) = best.expect("batch sizes nonempty");
    Ok(PhaseTwoResult {
        best_batch_size: checkpoint.meta.train.batch_size,
        rows,
        checkpoint,
        report,
        vocab,
        encoder_init: if encoder.is_some() { EncoderInit::Transfer } else { EncoderInit::Fresh },
        mean_true_length,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug)]
pub struct PreprocessingComparison {
    pub without: PhaseTwoResult,
    pub with: PhaseTwoResult,
    /// Per-step cost without preprocessing divided by cost with it.
    pub cost_ratio: f64,
}

/// Joint training without preprocessing (length 200) and with it (length
/// 120), each from a fresh encoder and its own vocabulary.
pub fn compare_preprocessing(
    datasets: &[DatasetInput],
    shared: &SharedConfig,
    batch_sizes: &[usize],
) -> Result<PreprocessingComparison> {
    let off = SharedConfig {
        prep: PrepConfig::without_preprocessing(),
        ..shared.clone()
    };
    let on = SharedConfig {
        prep: PrepConfig::with_preprocessing(),
        ..shared.clone()
    };
    let cost = |c: &SharedConfig| c.cost_per_sample();
    Ok(PreprocessingComparison {
        cost_ratio: cost(&off) / cost(&on),
        without: phase_two(datasets, &off, None, batch_sizes)?,
        with: phase_two(datasets, &on, None, batch_sizes)?,
    })
}

/// Block subsets × batch sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub subsets: Vec<Vec<usize>>,
    pub batch_sizes: Vec<usize>,
}

impl Default for AblationGrid {
    fn default() -> Self {
        AblationGrid {
            subsets: vec![vec![1, 3, 5, 7, 9, 11], vec![1, 5, 9], vec![1, 9], vec![5]],
            batch_sizes: vec![16, 32, 64, 128],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub subset: Vec<usize>,
    pub batch_size: usize,
    pub metrics: Metrics,
    pub param_count: usize,
}

impl AblationRow {
    /// Like `1,3,5 (32)`.
    pub fn label(&self) -> String {
        format!("{} ({})", subset_label(&self.subset), self.batch_size)
    }
}

/// One joint-training run per (subset, batch size): subsets in the given
/// order, batch sizes ascending.
pub fn ablate(datasets: &[DatasetInput], shared: &SharedConfig, grid: &AblationGrid) -> Result<Vec<AblationRow>> {
    if grid.subsets.is_empty() || grid.batch_sizes.is_empty() {
        return Err(Error::arg("ablation grid is empty"));
    }
    for s in &grid.subsets {
        shared.encoder.select_blocks(s)?;
    }
    let mut sizes = grid.batch_sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    let vocab = shared.build_vocab(datasets)?;
    let mut rows = Vec::new();
    for subset in &grid.subsets {
        let pruned = SharedConfig {
            encoder: shared.encoder.select_blocks(subset)?,
            ..shared.clone()
        };
        let run = phase_two(datasets, &pruned, None, &sizes)?;
        let (e, ..) = pruned.resolve(vocab.len(), 1);
        for r in run.rows {
            rows.push(AblationRow {
                subset: subset.clone(),
                batch_size: r.batch_size,
                metrics: r.metrics,
                param_count: e.param_count(),
            });
        }
    }
    Ok(rows)
}
