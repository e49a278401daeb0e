//! Flat `key = value` run configuration. Every key has a default, so the
//! resolved map always lists the full configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use unifake::classifier::HeadConfig;
use unifake::corpus::{ColumnMap, Label};
use unifake::encoder::EncoderConfig;
use unifake::textprep::PrepConfig;
use unifake::trainer::{Selection, TrainConfig};
use unifake::unified::{AblationGrid, SharedConfig};

use crate::InputError;

const DEFAULTS: &[(&str, &str)] = &[
    ("encoder", "desk"),
    ("d_model", "preset"),
    ("n_heads", "preset"),
    ("d_ff", "preset"),
    ("blocks_total", "preset"),
    ("blocks", "all"),
    ("lr", "0.003"),
    ("clip", "1"),
    ("epochs", "50"),
    ("batch_size", "32"),
    ("batch_sizes", "16,32,64,128,256,512,1024"),
    ("dropout", "0.1"),
    ("seed", "0"),
    ("freeze_encoder", "on"),
    ("selection", "rollback"),
    ("preprocess", "on"),
    ("max_seq_len", "preset"),
    ("min_word_len", "3"),
    ("vocab_max_size", "30000"),
    ("vocab_min_freq", "1"),
    ("split_ratio", "0.8"),
    ("threshold", "0.10"),
    ("baselines", "published"),
    ("compare_preprocessing", "on"),
    ("grid.lr", ""),
    ("grid.dropout", ""),
    ("grid.blocks", ""),
    ("ablation_subsets", "1,3,5,7,9,11;1,5,9;1,9;5"),
    ("ablation_batch_sizes", "16,32,64,128"),
];

const DATASET_KEYS: &[&str] = &["path", "test_path", "text", "label", "fake", "real", "delimiter"];

/// Raw settings with defaults filled in; later `set` calls win.
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
    /// Directory relative dataset paths are resolved against.
    base: PathBuf,
}

fn input(msg: String) -> anyhow::Error {
    anyhow!(InputError(msg))
}

impl Settings {
    pub fn defaults() -> Self {
        Settings {
            values: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            base: PathBuf::from("."),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| input(format!("{}: {e}", path.display())))?;
        let mut s = Self::parse(&text).map_err(|e| input(format!("{}: {e:#}", path.display())))?;
        s.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(s)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Self::defaults();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value", n + 1))?;
            s.set(k.trim(), v.trim()).with_context(|| format!("line {}", n + 1))?;
        }
        Ok(s)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let known = self.values.contains_key(key)
            || key
                .strip_prefix("dataset.")
                .and_then(|rest| rest.rsplit_once('.'))
                .is_some_and(|(name, field)| !name.is_empty() && DATASET_KEYS.contains(&field));
        if !known {
            bail!("unknown key `{key}`");
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    /// Canonical text form; parsing it gives back the same settings.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// `rel` resolved against the config file's directory.
    pub fn path(&self, rel: &str) -> PathBuf {
        self.base.join(rel)
    }

    fn num<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key);
        v.parse().map_err(|_| input(format!("config key `{key}`: cannot parse `{v}`")))
    }

    fn switch(&self, key: &str) -> Result<bool> {
        match self.get(key) {
            "on" | "true" | "yes" => Ok(true),
            "off" | "false" | "no" => Ok(false),
            v => Err(input(format!("config key `{key}`: expected on or off, got `{v}`"))),
        }
    }

    fn preset_num(&self, key: &str, preset: usize) -> Result<usize> {
        if self.get(key) == "preset" {
            Ok(preset)
        } else {
            self.num(key)
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.num("seed")
    }

    pub fn batch_size(&self) -> Result<usize> {
        self.num("batch_size")
    }

    pub fn threshold(&self) -> Result<f64> {
        self.num("threshold")
    }

    pub fn batch_sizes(&self) -> Result<Vec<usize>> {
        list(self.get("batch_sizes"), "batch_sizes")
    }

    pub fn compare_preprocessing(&self) -> Result<bool> {
        self.switch("compare_preprocessing")
    }

    pub fn prep(&self) -> Result<PrepConfig> {
        let mut p = if self.switch("preprocess")? {
            PrepConfig::with_preprocessing()
        } else {
            PrepConfig::without_preprocessing()
        };
        p.max_seq_len = self.preset_num("max_seq_len", p.max_seq_len)?;
        p.min_word_len = self.num("min_word_len")?;
        p.validate().map_err(|e| input(e.to_string()))?;
        Ok(p)
    }

    fn encoder(&self, max_seq_len: usize) -> Result<EncoderConfig> {
        let preset = match self.get("encoder") {
            "tiny" => EncoderConfig::tiny(0, max_seq_len),
            "desk" => EncoderConfig::desk(0, max_seq_len),
            "bert-base" => EncoderConfig {
                max_seq_len,
                ..EncoderConfig::bert_base()
            },
            v => return Err(input(format!("config key `encoder`: unknown preset `{v}`"))),
        };
        let n_blocks_total = self.preset_num("blocks_total", preset.n_blocks_total)?;
        let block_subset = match self.get("blocks") {
            "all" => (1..=n_blocks_total).collect(),
            v => list(v, "blocks")?,
        };
        Ok(EncoderConfig {
            d_model: self.preset_num("d_model", preset.d_model)?,
            n_heads: self.preset_num("n_heads", preset.n_heads)?,
            d_ff: self.preset_num("d_ff", preset.d_ff)?,
            n_blocks_total,
            block_subset,
            ..preset
        })
    }

    fn train(&self, max_seq_len: usize, preprocessing_enabled: bool) -> Result<TrainConfig> {
        let selection = match self.get("selection") {
            "rollback" => Selection::Rollback,
            "best-only" => Selection::BestOnly,
            v => return Err(input(format!("config key `selection`: unknown mode `{v}`"))),
        };
        Ok(TrainConfig {
            lr: self.num("lr")?,
            clip: self.num("clip")?,
            epochs: self.num("epochs")?,
            batch_size: self.num("batch_size")?,
            dropout_rate: self.num("dropout")?,
            seed: self.num("seed")?,
            freeze_encoder: self.switch("freeze_encoder")?,
            selection,
            max_seq_len,
            preprocessing_enabled,
            ..TrainConfig::default()
        })
    }

    /// Architecture and hyperparameters; the vocabulary size is filled in later.
    pub fn shared(&self) -> Result<SharedConfig> {
        let prep = self.prep()?;
        let encoder = self.encoder(prep.max_seq_len)?;
        let shared = SharedConfig {
            head: HeadConfig::new(encoder.d_model),
            train: self.train(prep.max_seq_len, prep.remove_short)?,
            encoder,
            prep,
            vocab_max_size: self.num("vocab_max_size")?,
            vocab_min_freq: self.num("vocab_min_freq")?,
        };
        shared.validate().map_err(|e| input(e.to_string()))?;
        Ok(shared)
    }

    /// Cartesian product of the `grid.*` lists over the base configuration.
    pub fn grid(&self) -> Result<Vec<SharedConfig>> {
        let base = self.shared()?;
        let axis = |key: &str| -> Vec<String> {
            self.get(key)
                .split(';')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect()
        };
        let mut grid = vec![base];
        for (key, field) in [("grid.lr", "lr"), ("grid.dropout", "dropout"), ("grid.blocks", "blocks")] {
            let values = axis(key);
            if values.is_empty() {
                continue;
            }
            let mut next = Vec::new();
            for cand in &grid {
                for v in &values {
                    let mut s = self.clone();
                    s.set(field, v)?;
                    let c = s.shared()?;
                    next.push(SharedConfig {
                        train: TrainConfig {
                            lr: if field == "lr" { c.train.lr } else { cand.train.lr },
                            dropout_rate: if field == "dropout" { c.train.dropout_rate } else { cand.train.dropout_rate },
                            ..cand.train.clone()
                        },
                        encoder: if field == "blocks" { c.encoder } else { cand.encoder.clone() },
                        ..cand.clone()
                    });
                }
            }
            grid = next;
        }
        Ok(grid)
    }

    pub fn split_ratio(&self) -> Result<f64> {
        self.num("split_ratio")
    }

    pub fn ablation_grid(&self) -> Result<AblationGrid> {
        let subsets = self
            .get("ablation_subsets")
            .split(';')
            .map(|s| list(s, "ablation_subsets"))
            .collect::<Result<_>>()?;
        Ok(AblationGrid {
            subsets,
            batch_sizes: list(self.get("ablation_batch_sizes"), "ablation_batch_sizes")?,
        })
    }

    /// Dataset definitions in name order.
    pub fn datasets(&self) -> Result<Vec<DatasetSpec>> {
        let mut names: Vec<&str> = self
            .values
            .keys()
            .filter_map(|k| k.strip_prefix("dataset.")?.rsplit_once('.').map(|(n, _)| n))
            .collect();
        names.dedup();
        names.iter().map(|n| self.dataset(n)).collect()
    }

    fn dataset(&self, name: &str) -> Result<DatasetSpec> {
        let field = |f: &str| self.values.get(&format!("dataset.{name}.{f}")).map(String::as_str);
        let required = |f: &str| field(f).ok_or_else(|| input(format!("dataset `{name}`: missing `{f}`")));
        let delimiter = match field("delimiter").unwrap_or("comma") {
            "comma" => b',',
            "tab" => b'\t',
            "semicolon" => b';',
            v => return Err(input(format!("dataset `{name}`: unknown delimiter `{v}`"))),
        };
        let texts: Vec<&str> = required("text")?.split(',').map(str::trim).collect();
        let mut mapping = Vec::new();
        for (key, label) in [("fake", Label::Fake), ("real", Label::Real)] {
            for v in required(key)?.split(',') {
                mapping.push((v.trim(), label));
            }
        }
        Ok(DatasetSpec {
            name: name.to_string(),
            path: self.path(required("path")?),
            test_path: field("test_path").map(|p| self.path(p)),
            columns: ColumnMap::new(&texts, required("label")?, &mapping).with_delimiter(delimiter),
        })
    }
}

fn list<T: std::str::FromStr>(text: &str, key: &str) -> Result<Vec<T>> {
    let out: Vec<T> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| input(format!("config key `{key}`: cannot parse `{s}`"))))
        .collect::<Result<_>>()?;
    if out.is_empty() {
        return Err(input(format!("config key `{key}`: empty list")));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub name: String,
    pub path: PathBuf,
    /// Predefined test split; otherwise `path` is split by `split_ratio`.
    pub test_path: Option<PathBuf>,
    pub columns: ColumnMap,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_text_round_trips() {
        let s = Settings::parse("encoder = tiny # small\nepochs=3\n\n# comment\ndataset.a.path = a.csv\n").unwrap();
        assert_eq!(s.get("epochs"), "3");
        assert_eq!(Settings::parse(&s.to_text()).unwrap(), s);
    }

    #[test]
    fn unknown_keys_and_bad_lines_are_rejected() {
        assert!(Settings::parse("epoch = 3").is_err());
        assert!(Settings::parse("epochs 3").is_err());
        assert!(Settings::parse("dataset.a.colour = red").is_err());
    }

    #[test]
    fn defaults_follow_preprocessing_mode() {
        let on = Settings::defaults().shared().unwrap();
        assert_eq!((on.prep.max_seq_len, on.train.max_seq_len), (120, 120));
        let off = Settings::parse("preprocess = off").unwrap().shared().unwrap();
        assert_eq!(off.prep.max_seq_len, 200);
        assert!(!off.train.preprocessing_enabled);
        assert_eq!(Settings::defaults().batch_sizes().unwrap(), unifake::trainer::BATCH_SIZES);
    }

    #[test]
    fn grid_is_a_cartesian_product() {
        let s = Settings::parse("encoder = tiny\ngrid.lr = 0.003;0.001\ngrid.blocks = 1,2;2").unwrap();
        let g = s.grid().unwrap();
        assert_eq!(g.len(), 4);
        assert_eq!(g[1].encoder.block_subset, vec![2]);
        assert_eq!(g[2].train.lr, 0.001);
    }

    #[test]
    fn datasets_resolve_relative_to_base() {
        let mut s = Settings::parse(
            "dataset.b.path = b.csv\ndataset.b.text = title, body\ndataset.b.label = y\ndataset.b.fake = 1\ndataset.b.real = 0\n\
             dataset.a.path = a.tsv\ndataset.a.text = t\ndataset.a.label = y\ndataset.a.fake = F\ndataset.a.real = R\ndataset.a.delimiter = tab",
        )
        .unwrap();
        s.base = PathBuf::from("/data");
        let d = s.datasets().unwrap();
        assert_eq!(d.iter().map(|d| d.name.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(d[0].path, PathBuf::from("/data/a.tsv"));
        assert_eq!(d[0].columns.delimiter, b'\t');
        assert_eq!(d[1].columns.text_columns, ["title", "body"]);
    }
}
