use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use iloci::config::{PreparedCorpus, RunConfig};
use iloci::dataset::{make_folds, DemoId, FoldSplit, NUM_FOLDS};
use iloci::evaluation::{ccr, inference_phase, learning_phase, run_cv, training_order, Failure};
use iloci::memory::ConceptId;
use iloci::report::{self, *};
use iloci::{Error, Mem, Result};

use crate::{exit, Common};

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

/// Creates the run directory and stores the effective config in it.
fn open_run(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.write_copy(&cfg.out_dir)?;
    Ok(cfg.out_dir.clone())
}

fn fold_split(cfg: &RunConfig, corpus: &PreparedCorpus, fold: usize) -> Result<FoldSplit> {
    let ids: Vec<DemoId> = corpus.demos.iter().map(|d| d.id.clone()).collect();
    make_folds(&ids, cfg.seed)?
        .into_iter()
        .nth(fold)
        .ok_or_else(|| Error::Config(format!("fold {fold} does not exist (folds 0..{NUM_FOLDS})")))
}

fn failure_code(failures: &[&Failure]) -> u8 {
    if failures.is_empty() {
        exit::OK
    } else if failures.iter().any(|f| f.divergence) {
        exit::DIVERGENCE
    } else {
        exit::OTHER
    }
}

fn write_summary(dir: &Path, lines: &[(&str, String)]) -> Result<()> {
    let body: String = lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    std::fs::write(dir.join("summary.txt"), body)?;
    Ok(())
}

pub fn preprocess(common: &Common) -> Result<u8> {
    let cfg = load_config(common)?;
    let out = open_run(&cfg)?;
    let corpus = cfg.prepare()?;
    let checksum = corpus.save(&cfg.cache)?;
    let ids: Vec<DemoId> = corpus.demos.iter().map(|d| d.id.clone()).collect();
    write_folds(&make_folds(&ids, cfg.seed)?, &out.join(FOLDS_JSON))?;
    write_summary(
        &out,
        &[
            ("cache", cfg.cache.display().to_string()),
            ("demos", corpus.demos.len().to_string()),
            ("checksum", checksum.clone()),
        ],
    )?;
    println!("{} demos -> {} (sha256 {checksum})", corpus.demos.len(), cfg.cache.display());
    Ok(exit::OK)
}

pub fn learn(common: &Common, fold: Option<usize>) -> Result<u8> {
    let cfg = load_config(common)?;
    let corpus = PreparedCorpus::load(&cfg)?;
    let out = open_run(&cfg)?;
    let order = match fold {
        Some(k) => training_order(&fold_split(&cfg, &corpus, k)?.train, cfg.seed, k),
        None => {
            let ids: Vec<DemoId> = corpus.demos.iter().map(|d| d.id.clone()).collect();
            training_order(&ids, cfg.seed, NUM_FOLDS)
        }
    };
    log::info!("learning {} demonstrations", order.len());
    let learned = learning_phase(&corpus.demos, &corpus.normalization, &order, &cfg.engine, &cfg.net)?;
    learned.mem.snapshot(&out.join(SNAPSHOT))?;
    write_concept_names(learned.teacher.bindings(), &out.join(CONCEPT_NAMES_CSV))?;
    write_episodes(&learned.episodes, &out.join(EPISODES_JSONL))?;
    write_signal(learned.teacher.signal_log(), &out.join(SIGNAL_CSV))?;
    learned.mem.write_entries_csv(std::fs::File::create(out.join(ENTRIES_CSV))?)?;
    let status = match &learned.failure {
        Some(f) => format!("partial: {f}"),
        None => "complete".into(),
    };
    write_summary(
        &out,
        &[
            ("status", status.clone()),
            ("episodes", learned.episodes.len().to_string()),
            ("entries", learned.mem.len().to_string()),
            ("concepts", learned.teacher.bindings().len().to_string()),
        ],
    )?;
    println!(
        "{} of {} demonstrations learned, {} entries, {} concepts ({status})",
        learned.episodes.len(),
        order.len(),
        learned.mem.len(),
        learned.teacher.bindings().len()
    );
    if let Some(f) = &learned.failure {
        eprintln!("error: {f}");
    }
    Ok(failure_code(&learned.failure.iter().collect::<Vec<_>>()))
}

pub fn infer(common: &Common, snapshot: &Path, fold: Option<usize>, demos: &[String]) -> Result<u8> {
    let cfg = load_config(common)?;
    let mem = Mem::restore(snapshot)?;
    let corpus = PreparedCorpus::load(&cfg)?;
    if mem.normalization != corpus.normalization {
        return Err(Error::Config(format!(
            "{} was learned with a different channel normalization than {}",
            snapshot.display(),
            cfg.cache.display()
        )));
    }
    let names_path = snapshot.with_file_name(CONCEPT_NAMES_CSV);
    let names: BTreeMap<ConceptId, String> = if names_path.is_file() {
        read_concept_names(&names_path)?
    } else {
        log::warn!("{} not found, reporting concept ids", names_path.display());
        BTreeMap::new()
    };
    let ids: Vec<DemoId> = match fold {
        Some(k) => fold_split(&cfg, &corpus, k)?.test,
        None if demos.is_empty() => corpus.demos.iter().map(|d| d.id.clone()).collect(),
        None => demos.iter().map(|s| s.parse()).collect::<Result<_>>()?,
    };
    let out = open_run(&cfg)?;
    let records = inference_phase(&mem, &names, &corpus.demos, &ids, &cfg.net)?;
    write_inference(&records, &out.join(INFERENCE_CSV))?;
    for r in &records {
        println!("{} -> {} (confidence {:.3})", r.demo, r.predicted, r.confidence);
    }
    if let Some(rate) = ccr(&records) {
        println!("CCR {rate:.3}% over {} demonstrations", records.len());
    }
    Ok(exit::OK)
}

pub fn eval(common: &Common) -> Result<u8> {
    let cfg = load_config(common)?;
    let corpus = PreparedCorpus::load(&cfg)?;
    let out = open_run(&cfg)?;
    let ids: Vec<DemoId> = corpus.demos.iter().map(|d| d.id.clone()).collect();
    let folds = make_folds(&ids, cfg.seed)?;
    let (report, mems) = run_cv(
        &corpus.demos,
        &corpus.normalization,
        &folds,
        &cfg.engine,
        &cfg.net,
        cfg.seed,
        cfg.parallel_folds,
    )?;
    for (fold, mem) in report.folds.iter().zip(&mems) {
        let dir = out.join(format!("fold{}", fold.fold));
        std::fs::create_dir_all(&dir)?;
        mem.snapshot(&dir.join(SNAPSHOT))?;
        write_concept_names(&fold.concept_names, &dir.join(CONCEPT_NAMES_CSV))?;
        write_episodes(&fold.episodes, &dir.join(EPISODES_JSONL))?;
        write_signal(&fold.signal, &dir.join(SIGNAL_CSV))?;
        write_inference(&fold.records, &dir.join(INFERENCE_CSV))?;
        mem.write_entries_csv(std::fs::File::create(dir.join(ENTRIES_CSV))?)?;
    }
    save_eval(&report, &out.join(EVAL_JSON))?;
    report::write_bundle(&report, &out)?;
    let failures: Vec<&Failure> = report.folds.iter().filter_map(|f| f.failure.as_ref()).collect();
    for f in &report.folds {
        match (&f.failure, f.ccr) {
            (Some(e), _) => println!("fold {}: failed ({e})", f.fold),
            (None, Some(rate)) => println!("fold {}: CCR {rate:.3}%", f.fold),
            (None, None) => println!("fold {}: no test demonstrations", f.fold),
        }
    }
    println!(
        "CCR {:.3} +/- {:.3} over {} completed folds",
        report.ccr_mean,
        report.ccr_std,
        report.completed_folds().count()
    );
    if let Some(t) = report.reward_trend() {
        println!("reward trend {t:+.3}");
    }
    Ok(failure_code(&failures))
}

pub fn report(common: &Common) -> Result<u8> {
    let cfg = load_config(common)?;
    let report = load_eval(&cfg.out_dir.join(EVAL_JSON))?;
    let written = report::write_bundle(&report, &cfg.out_dir)?;
    for p in written {
        println!("{}", p.display());
    }
    Ok(exit::OK)
}
