//! Teaching episodes, inference and folds on the bundled toy corpus.

use std::path::PathBuf;

use iloci::concept_engine::{infer, process_episode, EngineParams, Outcome, CONFIDENCE_CAP};
use iloci::dataset::*;
use iloci::evaluation::{regenerate_samples, run_cv, run_fold};
use iloci::memory::{EntryKind, Mem, TemporalPattern};
use iloci::rnnpb::NetConfig;
use iloci::teacher::OracleTeacher;

fn toy() -> (Vec<ProcessedDemo<f64>>, Normalization<f64>) {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/toy");
    let labels = ConceptLabelMap::load(&dir.join("concepts.csv")).unwrap();
    let corpus = load_corpus(&dir, &labels).unwrap();
    let cfg = PreprocessConfig {
        resample_len: 15,
        ..Default::default()
    };
    preprocess_corpus(&corpus, &labels, &cfg).unwrap()
}

fn net() -> NetConfig {
    NetConfig {
        max_epochs: 2000,
        ..Default::default()
    }
}

fn demo<'a>(demos: &'a [ProcessedDemo<f64>], id: &str) -> &'a ProcessedDemo<f64> {
    let id: DemoId = id.parse().unwrap();
    demos.iter().find(|d| d.id == id).unwrap()
}

#[test]
fn episodes_follow_the_three_cases() {
    let (demos, norm) = toy();
    let cfg = net();
    let params = EngineParams::default();
    // Arc#0 is taught as a variant of the Line concept.
    let mut teacher = OracleTeacher::new(demos.iter().map(|d| {
        let label = if d.id.to_string() == "Arc#0" { "Line".to_string() } else { d.concept_label.clone() };
        (d.id.clone(), label)
    }));
    let mem = Mem::new(cfg.clone(), norm);

    let (mem, first) = process_episode(&mem, demo(&demos, "Line#0"), &mut teacher, &params, &cfg, 0).unwrap();
    assert_eq!(first.outcome, Outcome::NewConcept);
    assert!(first.attempts.is_empty());
    assert_eq!(mem.len(), 1);
    assert_eq!(mem.entries[0].num_samples(), 1);
    assert_eq!(mem.entries[0].kind(), EntryKind::Exemplar);
    assert_eq!(teacher.concept_name(first.concept), Some("Line"));

    let before = mem.weights.clone();
    let (mem, dup) = process_episode(&mem, demo(&demos, "Line#0"), &mut teacher, &params, &cfg, 1).unwrap();
    assert_eq!(dup.outcome, Outcome::Strengthened, "distance {}", dup.attempts[0].distance);
    assert_eq!(dup.rewards, vec![1]);
    assert_eq!(mem.entries[0].num_samples(), 2);
    assert_eq!(mem.weights, before);

    let (mem, variant) = process_episode(&mem, demo(&demos, "Arc#0"), &mut teacher, &params, &cfg, 2).unwrap();
    assert!(variant.attempts[0].distance > params.similarity_threshold);
    assert_eq!(variant.outcome, Outcome::NewPrototype);
    assert_eq!(variant.rewards, vec![1]);
    assert_eq!(mem.len(), 2);

    let (mem, novel) = process_episode(&mem, demo(&demos, "Zig#0"), &mut teacher, &params, &cfg, 3).unwrap();
    assert_eq!(novel.outcome, Outcome::NewConcept);
    assert_eq!(novel.rewards, vec![-1]);
    assert_eq!(mem.concepts().len(), 2);
    assert_eq!(teacher.signal_log(), &[1, 1, -1]);
    mem.check_invariants().unwrap();
}

#[test]
fn inference_is_pure_and_finds_the_taught_concept() {
    let (demos, norm) = toy();
    let cfg = net();
    let params = EngineParams::default();
    let mut teacher = OracleTeacher::for_demos(&demos);
    let mut mem = Mem::new(cfg.clone(), norm);
    let (m, log) = process_episode(&mem, demo(&demos, "Line#0"), &mut teacher, &params, &cfg, 0).unwrap();
    mem = m;
    let only = infer(&mem, &demo(&demos, "Zig#1").channels, &cfg).unwrap();
    assert_eq!(only.concept, log.concept);
    assert_eq!(only.confidence, CONFIDENCE_CAP);

    for id in ["Zig#0", "Arc#0"] {
        mem = process_episode(&mem, demo(&demos, id), &mut teacher, &params, &cfg, 1).unwrap().0;
    }
    let frozen = mem.clone();
    for id in ["Line#0", "Zig#0", "Arc#0"] {
        let a = infer(&mem, &demo(&demos, id).channels, &cfg).unwrap();
        let b = infer(&mem, &demo(&demos, id).channels, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(teacher.concept_name(a.concept), Some(&id[..id.len() - 2]));
        assert!(a.confidence > 0.0);
    }
    assert_eq!(mem, frozen);
}

#[test]
fn rehearsal_without_new_patterns_keeps_regeneration() {
    let (demos, norm) = toy();
    let cfg = net();
    let mut mem = Mem::new(cfg.clone(), norm);
    for (k, id) in ["Line#0", "Arc#0", "Zig#0"].iter().enumerate() {
        let p = TemporalPattern::from_demo(demo(&demos, id), k as u32, EntryKind::Exemplar, cfg.pb_dim);
        mem = mem.rehearse(vec![p], &cfg).unwrap();
    }
    let again = mem.rehearse(Vec::new(), &cfg).unwrap();
    for (old, new) in mem.entries.iter().zip(&again.entries) {
        let before = old.regenerate(&mem.weights);
        let after = new.regenerate(&again.weights);
        let drift = iloci::memory::generation_error(&after, &before);
        assert!(drift <= 2.0 * old.generation_error.max(cfg.target_mse), "{drift}");
    }
}

#[test]
fn duplicated_test_demos_are_all_recognized() {
    let (demos, norm) = toy();
    // Long enough for the pair to reach the target error.
    let cfg = NetConfig {
        max_epochs: 20_000,
        ..Default::default()
    };
    let train: Vec<DemoId> = ["Line#0", "Arc#0"].iter().map(|s| s.parse().unwrap()).collect();
    let split = FoldSplit {
        fold_index: 0,
        test: train.iter().cycle().take(4).cloned().collect(),
        train,
    };
    let two: Vec<ProcessedDemo<f64>> = demos.iter().filter(|d| d.concept_label != "Zig").cloned().collect();
    let run = run_fold(&two, &norm, &split, &EngineParams::default(), &cfg, 3).unwrap();
    assert_eq!(run.report.ccr, Some(100.0));
    assert_eq!(run.report.records.len(), 4);

    let again = run_fold(&two, &norm, &split, &EngineParams::default(), &cfg, 3).unwrap();
    assert_eq!(run.report, again.report);

    let samples = regenerate_samples(&run.mem, &run.report.concept_names);
    assert_eq!(samples.len(), 2);
    let diagonal = {
        let ws = PreprocessConfig::default().workspace;
        (ws.width().powi(2) + ws.height().powi(2)).sqrt()
    };
    for s in &samples {
        let src = demo(&two, &run.mem.entries[s.entry].meta.origin.to_string());
        assert_eq!(s.points.len(), src.num_steps);
        let truth = *src.reconstruct_path(&norm).last().unwrap();
        let end = *s.points.last().unwrap();
        let miss = ((end.0 - truth.0).powi(2) + (end.1 - truth.1).powi(2)).sqrt();
        assert!(miss <= 0.1 * diagonal, "{}: endpoint off by {miss}", s.concept);
    }
    assert_eq!(samples, regenerate_samples(&run.mem, &run.report.concept_names));
}

#[test]
fn parallel_and_sequential_folds_agree() {
    let (demos, norm) = toy();
    let cfg = NetConfig {
        max_epochs: 300,
        ..Default::default()
    };
    let ids: Vec<DemoId> = demos.iter().map(|d| d.id.clone()).collect();
    let folds = make_folds(&ids, 5).unwrap();
    let (par, _) = run_cv(&demos, &norm, &folds, &EngineParams::default(), &cfg, 5, true).unwrap();
    let (seq, _) = run_cv(&demos, &norm, &folds, &EngineParams::default(), &cfg, 5, false).unwrap();
    assert_eq!(par, seq);
    assert_eq!(par.completed_folds().count(), 5);

    for fold in &par.folds {
        let mut known = 0;
        for e in &fold.episodes {
            assert_eq!(e.rewards.len(), e.attempts.len());
            assert!(e.attempts.len() <= known);
            let mut tried: Vec<_> = e.attempts.iter().map(|a| a.concept).collect();
            tried.sort_unstable();
            tried.dedup();
            assert_eq!(tried.len(), e.attempts.len(), "episode {} repeats a guess", e.episode);
            let (last, before) = match e.rewards.split_last() {
                Some((l, b)) => (Some(*l), b),
                None => (None, &[][..]),
            };
            assert!(before.iter().all(|r| *r == -1));
            if e.outcome == Outcome::NewConcept {
                assert_eq!(e.attempts.len(), known);
                assert_ne!(last, Some(1));
                known += 1;
            } else {
                assert_eq!(last, Some(1));
            }
        }
        assert_eq!(fold.signal, fold.episodes.iter().flat_map(|e| e.rewards.clone()).collect::<Vec<_>>());
    }
}
