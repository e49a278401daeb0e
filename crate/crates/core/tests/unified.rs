use unifake::classifier::HeadConfig;
use unifake::corpus::split;
use unifake::encoder::EncoderConfig;
use unifake::model::Model;
use unifake::numerics::rng::stream;
use unifake::report::{ablation_table, batch_size_table, sweep_table};
use unifake::synthetic::{synthetic_corpus, SyntheticSpec};
use unifake::textprep::PrepConfig;
use unifake::trainer::TrainConfig;
use unifake::unified::{
    ablate, compare_preprocessing, phase_one, phase_two, AblationGrid, BaselineTable, DatasetInput, EncoderInit,
    SharedConfig,
};

fn datasets(n_docs: usize) -> Vec<DatasetInput> {
    (1..=3)
        .map(|k| {
            let name = format!("dataset{k}");
            let c = synthetic_corpus(&name, &SyntheticSpec { n_docs, ..Default::default() }, 11, k).unwrap();
            DatasetInput { split: split(&c, 0.8, k).unwrap(), name }
        })
        .collect()
}

fn shared(epochs: usize, blocks: usize) -> SharedConfig {
    let encoder = EncoderConfig {
        n_blocks_total: blocks,
        block_subset: (1..=blocks).collect(),
        ..EncoderConfig::tiny(0, 32)
    };
    SharedConfig {
        head: HeadConfig::new(encoder.d_model),
        encoder,
        train: TrainConfig { epochs, seed: 3, freeze_encoder: false, ..Default::default() },
        prep: PrepConfig { max_seq_len: 32, ..PrepConfig::with_preprocessing() },
        vocab_max_size: 2000,
        vocab_min_freq: 1,
    }
}

fn names() -> Vec<String> {
    (1..=3).map(|k| format!("dataset{k}")).collect()
}

#[test]
fn toy_run_is_accepted_and_joint_model_learns() {
    let ds = datasets(200);
    let baselines = BaselineTable::uniform(&names(), 0.85, "toy").unwrap();
    let p1 = phase_one(&ds, &[shared(20, 2)], &[16, 32], &baselines, 0.10).unwrap();
    assert!(p1.accepted, "{:?}", p1.candidates);
    assert_eq!(p1.selected, Some(0));
    assert_eq!(p1.cells.len(), 6);
    let t = batch_size_table(&p1, 0);
    assert_eq!((t.rows.len(), t.columns.len()), (2, 13));

    let (enc, vocab) = p1.transfer_encoder().unwrap();
    let p2 = phase_two(&ds, &p1.selected_candidate().unwrap().config, Some((enc, vocab)), &[16]).unwrap();
    assert_eq!(p2.encoder_init, EncoderInit::Transfer);
    assert_eq!(p2.report.records.len(), 20);
    assert!(p2.report.best_val.accuracy >= 0.95, "{:?}", p2.report.best_val);
    assert_eq!(p2.checkpoint.meta.vocab_fingerprint.as_deref(), Some(vocab.fingerprint().as_str()));
}

#[test]
fn unreachable_baselines_give_infeasibility_result() {
    let ds = datasets(60);
    let baselines = BaselineTable::uniform(&names(), 1.0, "toy").unwrap();
    let p1 = phase_one(&ds, &[shared(1, 2)], &[16], &baselines, 0.001).unwrap();
    if !p1.accepted {
        assert_eq!(p1.selected, None);
        assert!(p1.transfer_encoder().is_none());
        assert_eq!(p1.min_deficits.len(), 3);
    }
    // Any dataset short of perfect accuracy makes the run infeasible.
    let perfect = p1.candidates[0].outcomes.iter().all(|o| o.metrics.accuracy == 1.0);
    assert_eq!(p1.accepted, perfect);
}

#[test]
fn feasibility_is_monotone_in_threshold() {
    let ds = datasets(60);
    let baselines = BaselineTable::uniform(&names(), 1.0, "toy").unwrap();
    let mut seen = false;
    for t in [0.01, 0.1, 0.3, 0.6, 1.0] {
        let ok = phase_one(&ds, &[shared(1, 2)], &[16], &baselines, t).unwrap().accepted;
        assert!(!seen || ok);
        seen |= ok;
    }
    assert!(seen);
}

#[test]
fn joint_training_head_is_fresh() {
    let s = shared(1, 2);
    let (e, h, t) = s.resolve(50, 16);
    let phase_one_model = Model::<f32>::init(e.clone(), h.clone(), t.seed, false).unwrap();
    let joint = Model::with_encoder(e, phase_one_model.encoder.clone(), h, t.seed, stream::HEAD_PHASE_TWO, false).unwrap();
    for (a, b) in phase_one_model.head.params().iter().zip(joint.head.params()) {
        if a.name.ends_with("weight") {
            assert_ne!(a.value, b.value, "{}", a.name);
        }
    }
    assert_eq!(joint.encoder, phase_one_model.encoder);
}

#[test]
fn joint_sweep_has_one_row_per_batch_size() {
    let ds = datasets(60);
    let sizes = [16, 32, 64, 128, 256, 512, 1024];
    let p2 = phase_two(&ds, &shared(1, 2), None, &sizes).unwrap();
    assert_eq!(p2.encoder_init, EncoderInit::Fresh);
    let t = sweep_table("joint", &p2.rows);
    assert_eq!((t.rows.len(), t.columns.len()), (7, 5));
}

#[test]
fn preprocessing_comparison() {
    let ds = datasets(60);
    let cmp = compare_preprocessing(&ds, &shared(1, 2), &[16, 32]).unwrap();
    assert!((1.5..=2.8).contains(&cmp.cost_ratio), "{}", cmp.cost_ratio);
    assert!(cmp.with.mean_true_length < cmp.without.mean_true_length);
    assert_eq!(cmp.with.rows.len(), 2);
    assert_eq!(cmp.without.rows.len(), 2);
    assert!(cmp.with.report.meta.preprocessing_enabled);
    assert!(!cmp.without.report.meta.preprocessing_enabled);
}

#[test]
fn default_ablation_grid_shape() {
    let ds = datasets(40);
    let s = shared(1, 12);
    let rows = ablate(&ds, &s, &AblationGrid::default()).unwrap();
    assert_eq!(rows.len(), 16);
    assert_eq!(rows[1].label(), "1,3,5,7,9,11 (32)");
    assert_eq!(rows[15].label(), "5 (128)");
    let counts: Vec<usize> = rows.chunks(4).map(|c| c[0].param_count).collect();
    assert!(counts.windows(2).all(|w| w[0] > w[1]), "{counts:?}");
    let t = ablation_table(&rows);
    assert_eq!(t.rows.len(), 16);

    let custom = AblationGrid { subsets: vec![vec![1, 9], vec![5]], batch_sizes: vec![16, 32] };
    assert_eq!(ablate(&ds, &s, &custom).unwrap().len(), 4);
}

#[test]
fn shipped_baseline_file_matches_published_table() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/baselines.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text, BaselineTable::published().to_csv());
    assert_eq!(BaselineTable::load(&path).unwrap(), BaselineTable::published());
}
