use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use unifake::corpus::{combine, combine_splits, load_dataset, split, Corpus, SplitCorpus};
use unifake::metrics::POSITIVE_CLASS;
use unifake::model::Model;
use unifake::report::{ablation_table, batch_size_table, phase_one_table, sweep_table, Table};
use unifake::synthetic::{synthetic_corpus, SyntheticSpec};
use unifake::textprep::{encode_corpus, seq_length_stats, EncodedSet, PrepConfig, Vocabulary};
use unifake::trainer::{
    config_hash, evaluate_detailed, load_checkpoint, model_from_checkpoint, save_checkpoint, TrainReport, Trainer,
};
use unifake::unified::{
    ablate as run_ablation, compare_preprocessing, phase_one, phase_two, BaselineTable, DatasetInput, PhaseOneResult,
    PhaseTwoResult,
};
use unifake::Error;

use crate::config::Settings;
use crate::manifest::Run;
use crate::{Common, EvalArgs, InputError, SynthArgs, TrainArgs};

pub const VOCAB: &str = "vocab.txt";
pub const COMBINED: &str = "combined";

fn train_file(name: &str) -> String {
    format!("{name}.train.enc")
}

fn test_file(name: &str) -> String {
    format!("{name}.test.enc")
}

/// Loads and splits every configured dataset, registering the files as run inputs.
fn load_inputs(settings: &Settings, run: &mut Run) -> Result<Vec<DatasetInput>> {
    let specs = settings.datasets()?;
    if specs.is_empty() {
        bail!(InputError("config defines no datasets (dataset.<name>.path = ...)".into()));
    }
    let mut out = Vec::new();
    for spec in specs {
        let (corpus, _) = load_dataset(&spec.path, &spec.columns, &spec.name)?;
        run.input(&spec.path)?;
        let split = match &spec.test_path {
            Some(p) => {
                let (test, _) = load_dataset(p, &spec.columns, &spec.name)?;
                run.input(p)?;
                SplitCorpus::predefined(corpus, test)
            }
            None => split(&corpus, settings.split_ratio()?, settings.seed()?)?,
        };
        out.push(DatasetInput { name: spec.name, split });
    }
    Ok(out)
}

fn encoded(corpus: &Corpus, vocab: &Vocabulary, prep: &PrepConfig) -> EncodedSet {
    EncodedSet {
        vocab_fingerprint: vocab.fingerprint(),
        max_seq_len: prep.max_seq_len,
        samples: encode_corpus(corpus, vocab, prep),
    }
}

fn write_table(run: &mut Run, stem: &str, table: &Table) -> Result<()> {
    run.write(&format!("{stem}.csv"), table.to_csv())?;
    run.write(&format!("{stem}.txt"), table.to_text())
}

/// The report without wall-clock values, so reruns write identical bytes.
fn timeless(report: &TrainReport) -> TrainReport {
    let mut r = report.clone();
    r.total_seconds = 0.0;
    for e in &mut r.records {
        e.seconds = 0.0;
    }
    r
}

pub fn prep(args: &Common) -> Result<()> {
    let settings = args.settings()?;
    let mut run = Run::start("prep", &args.out_dir()?, Some(&settings), settings.seed()?)?;
    let datasets = load_inputs(&settings, &mut run)?;
    let shared = settings.shared()?;
    let vocab = shared.build_vocab(&datasets)?;
    run.write(VOCAB, vocab.to_text())?;

    let columns = ["dataset", "docs", "without.mean", "without.p95", "without.max", "with.mean", "with.p95", "with.max"];
    let mut lengths = Table {
        title: format!("Token counts before truncation (words under {} characters removed in `with`)", shared.prep.min_word_len),
        columns: columns.map(String::from).to_vec(),
        rows: Vec::new(),
    };
    let combined = combine_splits(&datasets.iter().map(|d| &d.split).collect::<Vec<_>>())?;
    let all = datasets.iter().map(|d| (d.name.as_str(), &d.split)).chain([(COMBINED, &combined)]);
    for (name, s) in all {
        for (file, corpus) in [(train_file(name), &s.train), (test_file(name), &s.test)] {
            encoded(corpus, &vocab, &shared.prep).save(&run.path(&file))?;
            run.record(&file);
        }
        let stats = seq_length_stats(&combine(&[&s.train, &s.test])?, &shared.prep)?;
        use unifake::report::Cell::{Int, Num, Text};
        let (a, b) = (stats.without_removal, stats.with_removal);
        lengths.rows.push(vec![
            Text(name.into()),
            Int(stats.per_doc_with.len() as u64),
            Num(a.mean, 2),
            Int(a.p95 as u64),
            Int(a.max as u64),
            Num(b.mean, 2),
            Int(b.p95 as u64),
            Int(b.max as u64),
        ]);
    }
    write_table(&mut run, "lengths", &lengths)?;
    run.write("resolved.conf", settings.to_text())?;
    print!("{}", lengths.to_text());
    run.finish()
}

fn load_set(path: &Path, vocab_fp: &str, max_seq_len: usize, run: &mut Run) -> Result<EncodedSet> {
    let set = EncodedSet::load(path)?;
    run.input(path)?;
    if set.vocab_fingerprint != vocab_fp {
        bail!(Error::Incompatible(format!(
            "{}: encoded with vocabulary {}, expected {vocab_fp}",
            path.display(),
            set.vocab_fingerprint
        )));
    }
    if set.max_seq_len != max_seq_len {
        bail!(Error::Incompatible(format!(
            "{}: encoded at length {}, config asks for {max_seq_len}",
            path.display(),
            set.max_seq_len
        )));
    }
    Ok(set)
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let settings = args.common.settings()?;
    let mut run = Run::start("train", &args.common.out_dir()?, Some(&settings), settings.seed()?)?;
    let vocab_path = args.data.join(VOCAB);
    let vocab = Vocabulary::load(&vocab_path)?;
    run.input(&vocab_path)?;
    let shared = settings.shared()?;
    let fp = vocab.fingerprint();
    let len = shared.prep.max_seq_len;
    let train_set = load_set(&args.data.join(train_file(&args.dataset)), &fp, len, &mut run)?;
    let val_set = load_set(&args.data.join(test_file(&args.dataset)), &fp, len, &mut run)?;

    let (e, h, t) = shared.resolve(vocab.len(), settings.batch_size()?);
    let mut trainer = match &args.resume {
        Some(p) => {
            let ckpt = load_checkpoint(p)?;
            run.input(p)?;
            let expected = config_hash(&e, &h, &t);
            if ckpt.meta.config_hash != expected {
                bail!(Error::Incompatible(format!(
                    "{}: config hash {} differs from this run's {expected}",
                    p.display(),
                    ckpt.meta.config_hash
                )));
            }
            if ckpt.meta.vocab_fingerprint.as_deref() != Some(fp.as_str()) {
                bail!(Error::Incompatible(format!("{}: trained with a different vocabulary", p.display())));
            }
            Trainer::from_checkpoint(&ckpt)?
        }
        None => {
            let model = Model::init(e, h, t.seed, t.freeze_encoder)?;
            let mut tr = Trainer::new(model, t)?;
            tr.vocab_fingerprint = Some(fp);
            tr
        }
    };
    run.set_config_hash(trainer.config_hash());
    let tr = trainer.prepare(&train_set.samples)?;
    let va = trainer.prepare(&val_set.samples)?;
    let mut this_run = 0;
    while !trainer.is_done() && args.stop_after.is_none_or(|n| this_run < n) {
        let r = trainer.run_epoch(&tr, &va)?;
        this_run += 1;
        println!(
            "epoch {:>3}  loss {:.6}  val_acc {:.4}  val_f1 {:.4}{}",
            r.epoch,
            r.train_loss,
            r.val.accuracy,
            r.val.f1,
            if r.improved { "  *" } else { "" }
        );
        run.time(&format!("epoch{}", r.epoch), r.seconds);
    }
    save_checkpoint(&trainer.checkpoint(), &run.path("last.ckpt"))?;
    run.record("last.ckpt");
    if trainer.epochs_completed() > 0 {
        save_checkpoint(&trainer.best_checkpoint()?, &run.path("best.ckpt"))?;
        run.record("best.ckpt");
        let report = trainer.report()?;
        run.write("report.json", timeless(&report).to_json())?;
        run.write(
            "summary.txt",
            format!(
                "{}\n{}\n",
                TrainReport::SUMMARY_HEADER,
                report.summary_row(trainer.cfg.batch_size)
            ),
        )?;
        println!(
            "best epoch {} accuracy {:.4} (positive class: {POSITIVE_CLASS})",
            report.best_epoch, report.best_val.accuracy
        );
    }
    if !trainer.is_done() {
        run.set_outcome("stopped early; resume from last.ckpt");
    }
    run.write("resolved.conf", settings.to_text())?;
    run.finish()
}

#[derive(Serialize)]
struct EvalOutput {
    positive_class: &'static str,
    checkpoint: String,
    data: String,
    confusion: unifake::metrics::Confusion,
    metrics: unifake::metrics::Metrics,
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let set = EncodedSet::load(&args.data)?;
    if let Some(fp) = &ckpt.meta.vocab_fingerprint {
        if *fp != set.vocab_fingerprint {
            bail!(Error::Incompatible(format!(
                "{} uses vocabulary {} but {} was trained with {fp}",
                args.data.display(),
                set.vocab_fingerprint,
                args.checkpoint.display()
            )));
        }
    }
    if set.max_seq_len > ckpt.meta.encoder.max_seq_len {
        bail!(Error::Incompatible(format!(
            "{} is encoded at length {}, beyond the model's {} positions",
            args.data.display(),
            set.max_seq_len,
            ckpt.meta.encoder.max_seq_len
        )));
    }
    let model = model_from_checkpoint(&ckpt)?;
    let (confusion, metrics) = evaluate_detailed(&model, &set.samples)?;
    let text = format!(
        "positive class: {POSITIVE_CLASS}\nsamples {}\naccuracy {}\nprecision {}\nrecall {}\nf1 {}\ntp {} fp {} fn {} tn {}\n",
        confusion.total(),
        metrics.accuracy,
        metrics.precision,
        metrics.recall,
        metrics.f1,
        confusion.tp,
        confusion.fp,
        confusion.fn_,
        confusion.tn
    );
    print!("{text}");
    if let Some(out) = &args.out {
        let mut run = Run::start("eval", out, None, ckpt.meta.train.seed)?;
        run.input(&args.checkpoint)?;
        run.input(&args.data)?;
        run.set_config_hash(ckpt.meta.config_hash.clone());
        run.write("eval.txt", &text)?;
        run.write_json(
            "eval.json",
            &EvalOutput {
                positive_class: POSITIVE_CLASS,
                checkpoint: args.checkpoint.display().to_string(),
                data: args.data.display().to_string(),
                confusion,
                metrics,
            },
        )?;
        run.finish()?;
    }
    Ok(())
}

fn baselines(settings: &Settings, names: &[String], run: &mut Run) -> Result<BaselineTable> {
    let spec = settings.get("baselines");
    let table = if spec == "published" {
        BaselineTable::published()
    } else if let Some(v) = spec.strip_prefix("uniform:") {
        let acc: f64 = v
            .parse()
            .map_err(|_| InputError(format!("config key `baselines`: cannot parse `{v}`")))?;
        BaselineTable::uniform(names, acc, "uniform")?
    } else {
        let p = settings.path(spec);
        let t = BaselineTable::load(&p)?;
        run.input(&p)?;
        t
    };
    for n in names {
        table.get(n).map_err(|_| InputError(format!("no baseline for dataset `{n}`")))?;
    }
    Ok(table)
}

/// Phase-one output without wall-clock values.
fn timeless_phase_one(p1: &PhaseOneResult, run: &mut Run) -> PhaseOneResult {
    let mut p = p1.clone();
    for c in &mut p.cells {
        run.time(&format!("phase1.c{}.{}.bs{}", c.candidate, c.dataset, c.batch_size), c.seconds);
        c.seconds = 0.0;
    }
    p
}

fn write_sweep(run: &mut Run, stem: &str, title: &str, p2: &PhaseTwoResult) -> Result<()> {
    let mut rows = p2.rows.clone();
    for r in &mut rows {
        run.time(&format!("{stem}.bs{}", r.batch_size), r.seconds);
        r.seconds = 0.0;
    }
    write_table(run, stem, &sweep_table(title, &rows))?;
    run.write(&format!("{stem}_report.json"), timeless(&p2.report).to_json())
}

#[derive(Serialize)]
struct PreprocessingSummary {
    cost_ratio: f64,
    mean_true_length_without: f64,
    mean_true_length_with: f64,
    best_accuracy_without: f64,
    best_accuracy_with: f64,
}

pub fn unify(args: &Common) -> Result<()> {
    let settings = args.settings()?;
    let mut run = Run::start("unify", &args.out_dir()?, Some(&settings), settings.seed()?)?;
    run.write("resolved.conf", settings.to_text())?;
    let datasets = load_inputs(&settings, &mut run)?;
    let names: Vec<String> = datasets.iter().map(|d| d.name.clone()).collect();
    let baselines = baselines(&settings, &names, &mut run)?;
    run.write("baselines.csv", baselines.to_csv())?;
    let grid = settings.grid()?;
    let sizes = settings.batch_sizes()?;

    let start = Instant::now();
    let p1 = phase_one(&datasets, &grid, &sizes, &baselines, settings.threshold()?)?;
    run.time("phase1", start.elapsed().as_secs_f64());
    let stored = timeless_phase_one(&p1, &mut run);
    run.write_json("phase_one.json", &stored)?;
    write_table(&mut run, "phase_one", &phase_one_table(&p1))?;
    for c in 0..p1.candidates.len() {
        write_table(&mut run, &format!("batch_sizes.c{c}"), &batch_size_table(&p1, c))?;
    }
    let Some((encoder, vocab)) = p1.transfer_encoder() else {
        let mut text = format!(
            "infeasible: no candidate keeps every dataset within {} of its baseline\nminimum deficit per dataset:\n",
            p1.threshold
        );
        for (d, v) in &p1.min_deficits {
            text.push_str(&format!("  {d}: {v:.4}\n"));
        }
        print!("{text}");
        run.write("infeasible.txt", text)?;
        run.set_outcome("infeasible");
        return run.finish();
    };
    let selected = p1.selected_candidate().context("accepted result has a selection")?;
    println!(
        "accepted candidate {} (mean accuracy {:.4})",
        selected.index, selected.mean_accuracy
    );

    let p2 = phase_two(&datasets, &selected.config, Some((encoder, vocab)), &sizes)?;
    run.time("phase2", p2.seconds);
    write_sweep(&mut run, "joint", "Joint training on the combined dataset", &p2)?;
    save_checkpoint(&p2.checkpoint, &run.path("joint.ckpt"))?;
    run.record("joint.ckpt");
    run.set_config_hash(p2.checkpoint.meta.config_hash.clone());
    run.write("joint_vocab.txt", p2.vocab.to_text())?;
    let combined = combine_splits(&datasets.iter().map(|d| &d.split).collect::<Vec<_>>())?;
    encoded(&combined.test, &p2.vocab, &selected.config.prep).save(&run.path("combined.test.enc"))?;
    run.record("combined.test.enc");
    println!(
        "joint model: batch size {} accuracy {:.4} f1 {:.4}",
        p2.best_batch_size, p2.report.best_val.accuracy, p2.report.best_val.f1
    );

    if settings.compare_preprocessing()? {
        let cmp = compare_preprocessing(&datasets, &selected.config, &sizes)?;
        write_sweep(&mut run, "preprocess_off", "Joint training without preprocessing", &cmp.without)?;
        write_sweep(&mut run, "preprocess_on", "Joint training with preprocessing", &cmp.with)?;
        run.time("preprocess_off", cmp.without.seconds);
        run.time("preprocess_on", cmp.with.seconds);
        run.write_json(
            "preprocessing.json",
            &PreprocessingSummary {
                cost_ratio: cmp.cost_ratio,
                mean_true_length_without: cmp.without.mean_true_length,
                mean_true_length_with: cmp.with.mean_true_length,
                best_accuracy_without: cmp.without.report.best_val.accuracy,
                best_accuracy_with: cmp.with.report.best_val.accuracy,
            },
        )?;
        println!("preprocessing cost ratio {:.3}", cmp.cost_ratio);
    }
    run.finish()
}

pub fn ablate(args: &Common) -> Result<()> {
    let settings = args.settings()?;
    let mut run = Run::start("ablate", &args.out_dir()?, Some(&settings), settings.seed()?)?;
    run.write("resolved.conf", settings.to_text())?;
    let datasets = load_inputs(&settings, &mut run)?;
    let rows = run_ablation(&datasets, &settings.shared()?, &settings.ablation_grid()?)?;
    let table = ablation_table(&rows);
    write_table(&mut run, "ablation", &table)?;
    run.write_json("ablation.json", &rows)?;
    print!("{}", table.to_text());
    run.finish()
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let mut run = Run::start("synth", &args.out, None, args.seed)?;
    let spec = SyntheticSpec {
        n_docs: args.docs,
        ..Default::default()
    };
    let mut conf = String::from(
        "# Synthetic marker-word task at the tiny configuration.\n\
         encoder = tiny\nfreeze_encoder = off\nepochs = 20\nmax_seq_len = 32\n\
         batch_sizes = 16,32\nthreshold = 0.10\nbaselines = uniform:0.85\n",
    );
    conf.push_str(&format!("seed = {}\n", args.seed));
    for k in 1..=3u64 {
        let name = format!("dataset{k}");
        let corpus = synthetic_corpus(&name, &spec, args.seed, k)?;
        let mut csv = String::from("text,label\n");
        for d in &corpus.docs {
            csv.push_str(&format!("{},{}\n", d.text, d.label));
        }
        let file = format!("{name}.csv");
        run.write(&file, csv)?;
        conf.push_str(&format!(
            "dataset.{name}.path = {file}\ndataset.{name}.text = text\ndataset.{name}.label = label\n\
             dataset.{name}.fake = 1\ndataset.{name}.real = 0\n"
        ));
    }
    run.write("synthetic.conf", conf)?;
    run.finish()
}
