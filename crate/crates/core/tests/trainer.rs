use std::collections::HashSet;

use unifake::classifier::HeadConfig;
use unifake::corpus::{split, Corpus, Document, Label};
use unifake::encoder::EncoderConfig;
use unifake::metrics::{compute_metrics, Confusion};
use unifake::model::Model;
use unifake::synthetic::{synthetic_corpus, SyntheticSpec};
use unifake::textprep::{build_vocab, encode_corpus, EncodedSample, PrepConfig};
use unifake::trainer::{
    batch_iterator, evaluate, evaluate_detailed, load_checkpoint, model_from_checkpoint, save_checkpoint, train,
    Checkpoint, Selection, TrainConfig, Trainer,
};
use unifake::Error;

const LEN: usize = 24;

fn encoded(n_docs: usize, seed: u64) -> (Vec<EncodedSample>, Vec<EncodedSample>, usize) {
    let c = synthetic_corpus("toy", &SyntheticSpec { n_docs, ..Default::default() }, seed, 0).unwrap();
    let s = split(&c, 0.8, seed).unwrap();
    let prep = PrepConfig { max_seq_len: LEN, ..PrepConfig::with_preprocessing() };
    let vocab = build_vocab(&s.train, &prep, 500, 1).unwrap();
    (encode_corpus(&s.train, &vocab, &prep), encode_corpus(&s.test, &vocab, &prep), vocab.len())
}

fn model(vocab: usize, seed: u64, freeze: bool) -> Model<f32> {
    Model::init(EncoderConfig::tiny(vocab, LEN), HeadConfig::new(8), seed, freeze).unwrap()
}

fn cfg(epochs: usize, seed: u64, freeze: bool) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        seed,
        freeze_encoder: freeze,
        max_seq_len: LEN,
        ..Default::default()
    }
}

#[test]
fn batch_partition_and_merge() {
    let sizes: Vec<usize> = batch_iterator(10, 4, 1, 0).iter().map(Vec::len).collect();
    assert_eq!(sizes, vec![4, 4, 2]);
    let sizes: Vec<usize> = batch_iterator(9, 4, 1, 0).iter().map(Vec::len).collect();
    assert_eq!(sizes, vec![4, 5]);
    for n in 1..60 {
        for bs in [2, 3, 16] {
            let b = batch_iterator(n, bs, 3, 7);
            let all: Vec<usize> = b.iter().flatten().copied().collect();
            assert_eq!(all.len(), n);
            assert_eq!(all.iter().copied().collect::<HashSet<_>>().len(), n);
            assert_eq!(b, batch_iterator(n, bs, 3, 7));
            if n >= 2 {
                assert!(b.iter().all(|x| x.len() >= 2));
            }
        }
    }
    assert_ne!(batch_iterator(50, 8, 1, 0), batch_iterator(50, 8, 2, 0));
}

#[test]
fn learns_twenty_sample_marker_task() {
    let docs: Vec<Document> = (0..25)
        .map(|i| Document {
            text: if i % 2 == 0 {
                format!("breaking zephyrine story number {i} today")
            } else {
                format!("ordinary story number {i} today")
            },
            label: if i % 2 == 0 { Label::Fake } else { Label::Real },
            source: "toy".into(),
        })
        .collect();
    let c = Corpus { name: "toy".into(), docs };
    let s = split(&c, 0.8, 3).unwrap();
    assert_eq!(s.train.len(), 20);
    let prep = PrepConfig { max_seq_len: 12, ..PrepConfig::with_preprocessing() };
    let vocab = build_vocab(&s.train, &prep, 100, 1).unwrap();
    let tr = encode_corpus(&s.train, &vocab, &prep);
    let va = encode_corpus(&s.test, &vocab, &prep);
    let m = Model::init(EncoderConfig::tiny(vocab.len(), 12), HeadConfig::new(8), 1, false).unwrap();
    let config = TrainConfig { epochs: 20, batch_size: 4, seed: 1, freeze_encoder: false, max_seq_len: 12, ..Default::default() };
    let (_, report) = train(m, &tr, &va, &config).unwrap();
    assert!(report.best_val.accuracy >= 0.95, "{:?}", report.best_val);
}

#[test]
fn identical_runs_are_bit_identical() {
    let (tr, va, v) = encoded(120, 2);
    for freeze in [true, false] {
        let (c1, r1) = train(model(v, 4, freeze), &tr, &va, &cfg(3, 4, freeze)).unwrap();
        let (c2, r2) = train(model(v, 4, freeze), &tr, &va, &cfg(3, 4, freeze)).unwrap();
        assert_eq!(r1.loss_trace(), r2.loss_trace());
        assert_eq!(c1.to_bytes(), c2.to_bytes());
        let (_, r3) = train(model(v, 5, freeze), &tr, &va, &cfg(3, 5, freeze)).unwrap();
        assert_ne!(r1.loss_trace(), r3.loss_trace());
    }
}

#[test]
fn report_invariants() {
    let (tr, va, v) = encoded(120, 3);
    for selection in [Selection::Rollback, Selection::BestOnly] {
        let config = TrainConfig { selection, ..cfg(6, 1, false) };
        let (ckpt, report) = train(model(v, 1, false), &tr, &va, &config).unwrap();
        assert_eq!(report.records.len(), 6);
        let max = report.records.iter().map(|r| r.val.accuracy).fold(0.0, f64::max);
        assert_eq!(report.best_val.accuracy, max);
        assert_eq!(report.records[report.best_epoch - 1].val.accuracy, max);
        let expected_steps = batch_iterator(tr.len(), 16, 1, 1).len();
        for r in &report.records {
            assert_eq!(r.steps, expected_steps);
            assert!(r.max_clipped_norm <= config.clip * (1.0 + 1e-6));
            if r.max_grad_norm > config.clip {
                assert!(r.clipped_steps > 0);
            }
            assert!(!(r.restored && selection == Selection::BestOnly));
        }
        assert!(!report.meta.warnings.is_empty());
        // The best checkpoint reproduces the best validation accuracy exactly.
        let m = model_from_checkpoint(&ckpt).unwrap();
        assert_eq!(evaluate(&m, &va).unwrap(), report.best_val);
    }
}

#[test]
fn single_epoch_report() {
    let (tr, va, v) = encoded(60, 4);
    let (_, report) = train(model(v, 1, true), &tr, &va, &cfg(1, 1, true)).unwrap();
    assert_eq!(report.records.len(), 1);
    assert_eq!(report.best_epoch, 1);
}

#[test]
fn empty_validation_rejected() {
    let (tr, _, v) = encoded(40, 5);
    assert!(matches!(train(model(v, 1, true), &tr, &[], &cfg(1, 1, true)), Err(Error::Argument(_))));
}

#[test]
fn evaluate_matches_independent_tally() {
    let (tr, va, v) = encoded(100, 6);
    let m = model(v, 2, true);
    let (c, metrics) = evaluate_detailed(&m, &va).unwrap();
    assert_eq!(c.total() as usize, va.len());
    assert_eq!(evaluate(&m, &va).unwrap(), metrics);
    assert_eq!(compute_metrics(&c), metrics);
    let _ = tr;

    // Force class 1 through the output bias.
    let mut always_fake = m.clone();
    always_fake.head.l3_b.value.data_mut().copy_from_slice(&[-1e6, 1e6]);
    let fakes: Vec<EncodedSample> = va.iter().filter(|s| s.label == Label::Fake).cloned().collect();
    let (c, metrics) = evaluate_detailed(&always_fake, &fakes).unwrap();
    assert_eq!(metrics.accuracy, 1.0);
    assert_eq!(c, Confusion { tp: fakes.len() as u64, fp: 0, fn_: 0, tn: 0 });
}

#[test]
fn save_load_resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let (tr, va, v) = encoded(120, 7);
    for freeze in [false, true] {
        let config = cfg(6, 3, freeze);
        let mut full = Trainer::new(model(v, 3, freeze), config.clone()).unwrap();
        let (a, b) = (full.prepare(&tr).unwrap(), full.prepare(&va).unwrap());
        full.run(&a, &b).unwrap();

        let mut first = Trainer::new(model(v, 3, freeze), config.clone()).unwrap();
        for _ in 0..3 {
            first.run_epoch(&a, &b).unwrap();
        }
        let path = dir.path().join("mid.ckpt");
        save_checkpoint(&first.checkpoint(), &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, first.checkpoint());
        let mut resumed = Trainer::from_checkpoint(&loaded).unwrap();
        let (a2, b2) = (resumed.prepare(&tr).unwrap(), resumed.prepare(&va).unwrap());
        resumed.run(&a2, &b2).unwrap();

        let trace = |t: &Trainer| t.records().iter().map(|r| r.train_loss).collect::<Vec<_>>();
        assert_eq!(trace(&full), trace(&resumed));
        assert_eq!(full.best_checkpoint().unwrap().to_bytes(), resumed.best_checkpoint().unwrap().to_bytes());
    }
}

#[test]
fn corrupted_checkpoints_rejected() {
    let (tr, va, v) = encoded(60, 8);
    let (ckpt, _) = train(model(v, 1, true), &tr, &va, &cfg(1, 1, true)).unwrap();
    let bytes = ckpt.to_bytes();
    assert_eq!(&bytes[..4], b"UFND");
    assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ckpt);
    for at in [0, 5, 13, bytes.len() / 2, bytes.len() - 5, bytes.len() - 1] {
        let mut bad = bytes.clone();
        bad[at] ^= 0x40;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Integrity(_))), "flip at {at}");
    }
    for cut in [0, 3, 15, bytes.len() / 3, bytes.len() - 1] {
        assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Integrity(_))), "cut at {cut}");
    }
    // Same bytes under another version number, with a valid checksum.
    let mut other = bytes[..bytes.len() - 4].to_vec();
    other[4..8].copy_from_slice(&2u32.to_le_bytes());
    let crc = crc32(&other);
    other.extend_from_slice(&crc.to_le_bytes());
    assert!(matches!(Checkpoint::from_bytes(&other), Err(Error::Version { found: 2, expected: 1 })));
}

/// Bitwise CRC-32 (IEEE, reflected), independent of the library's implementation.
fn crc32(data: &[u8]) -> u32 {
    let mut crc = 0xFFFF_FFFFu32;
    for &b in data {
        crc ^= b as u32;
        for _ in 0..8 {
            crc = if crc & 1 != 0 { (crc >> 1) ^ 0xEDB8_8320 } else { crc >> 1 };
        }
    }
    !crc
}
