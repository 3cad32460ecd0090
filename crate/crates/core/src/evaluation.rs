//! Five-fold experiment: learning phase with the oracle teacher on the
//! training partition, feedback-free classification of the rest, and the
//! aggregated confusion and confidence tables.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concept_engine::{infer, process_episode, EngineParams, EpisodeLog};
use crate::dataset::{reconstruct_path, DemoId, FoldSplit, Normalization, ProcessedDemo};
use crate::error::{Error, Result};
use crate::memory::{ConceptId, EntryKind, Mem};
use crate::rnnpb::{NetConfig, PbVector};
use crate::scalar::Scalar;
use crate::teacher::{smoothed_signal, OracleTeacher, SIGNAL_WINDOW};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceRecord {
    pub demo: String,
    pub true_concept: String,
    pub predicted: String,
    pub predicted_id: ConceptId,
    pub confidence: f64,
    pub nearest_entry: usize,
}

impl InferenceRecord {
    pub fn correct(&self) -> bool {
        self.predicted == self.true_concept
    }
}

/// Square table indexed by concept name; `None` marks an absent row or an
/// empty cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledMatrix {
    pub labels: Vec<String>,
    pub cells: Vec<Vec<Option<f64>>>,
}

impl LabeledMatrix {
    fn empty(labels: &[String]) -> Self {
        LabeledMatrix {
            labels: labels.to_vec(),
            cells: vec![vec![None; labels.len()]; labels.len()],
        }
    }

    fn position(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::Contract(format!("concept {label} is not a report label")))
    }

    pub fn get(&self, row: &str, col: &str) -> Option<f64> {
        let r = self.labels.iter().position(|l| l == row)?;
        let c = self.labels.iter().position(|l| l == col)?;
        self.cells[r][c]
    }

    pub fn row_present(&self, r: usize) -> bool {
        self.cells[r].iter().any(Option::is_some)
    }

    /// Entry-wise mean over the matrices holding a value.
    pub fn average(ms: &[LabeledMatrix]) -> Result<LabeledMatrix> {
        let first = ms.first().ok_or_else(|| Error::Contract("nothing to average".into()))?;
        if ms.iter().any(|m| m.labels != first.labels) {
            return Err(Error::Contract("matrices disagree on labels".into()));
        }
        let mut out = LabeledMatrix::empty(&first.labels);
        for r in 0..out.labels.len() {
            for c in 0..out.labels.len() {
                let vals: Vec<f64> = ms.iter().filter_map(|m| m.cells[r][c]).collect();
                if !vals.is_empty() {
                    out.cells[r][c] = Some(vals.iter().sum::<f64>() / vals.len() as f64);
                }
            }
        }
        Ok(out)
    }
}

/// Row-normalized percentages of predictions per true concept.
pub fn confusion_matrix(records: &[InferenceRecord], labels: &[String]) -> Result<LabeledMatrix> {
    let mut m = LabeledMatrix::empty(labels);
    let mut counts = vec![vec![0usize; labels.len()]; labels.len()];
    for rec in records {
        let r = m.position(&rec.true_concept)?;
        let c = m.position(&rec.predicted)?;
        counts[r][c] += 1;
    }
    for (r, row) in counts.iter().enumerate() {
        let n: usize = row.iter().sum();
        if n > 0 {
            for (c, k) in row.iter().enumerate() {
                m.cells[r][c] = Some(100.0 * *k as f64 / n as f64);
            }
        }
    }
    Ok(m)
}

/// Mean confidence of the predictions falling in each cell.
pub fn confidence_matrix(records: &[InferenceRecord], labels: &[String]) -> Result<LabeledMatrix> {
    let mut m = LabeledMatrix::empty(labels);
    let mut sums = vec![vec![(0.0, 0usize); labels.len()]; labels.len()];
    for rec in records {
        let r = m.position(&rec.true_concept)?;
        let c = m.position(&rec.predicted)?;
        sums[r][c].0 += rec.confidence;
        sums[r][c].1 += 1;
    }
    for r in 0..labels.len() {
        for c in 0..labels.len() {
            let (s, n) = sums[r][c];
            if n > 0 {
                m.cells[r][c] = Some(s / n as f64);
            }
        }
    }
    Ok(m)
}

/// Percentage of correctly classified records.
pub fn ccr(records: &[InferenceRecord]) -> Option<f64> {
    if records.is_empty() {
        return None;
    }
    let correct = records.iter().filter(|r| r.correct()).count();
    Some(100.0 * correct as f64 / records.len() as f64)
}

/// Correct-classification rate recovered from a confusion matrix and the
/// per-concept test counts.
pub fn ccr_from_confusion(m: &LabeledMatrix, records: &[InferenceRecord]) -> Option<f64> {
    let mut weighted = 0.0;
    let mut total = 0usize;
    for (r, label) in m.labels.iter().enumerate() {
        let n = records.iter().filter(|x| &x.true_concept == label).count();
        if n > 0 {
            weighted += m.cells[r][r].unwrap_or(0.0) * n as f64;
            total += n;
        }
    }
    (total > 0).then(|| weighted / total as f64)
}

/// Mean and sample standard deviation.
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean smoothed reward over the last quarter of the interactions minus the
/// mean over the first quarter.
pub fn reward_trend(signal: &[i8]) -> Option<f64> {
    let q = signal.len() / 4;
    if q == 0 {
        return None;
    }
    let s = smoothed_signal(signal, SIGNAL_WINDOW);
    let first = s[..q].iter().sum::<f64>() / q as f64;
    let last = s[s.len() - q..].iter().sum::<f64>() / q as f64;
    Some(last - first)
}

/// Classical (Torgerson) scaling of a distance matrix into the plane.
/// Missing dimensions (rank below two) are returned as zeros.
pub fn classical_mds(dist: &[Vec<f64>]) -> Vec<(f64, f64)> {
    let n = dist.len();
    if n == 0 {
        return Vec::new();
    }
    let d2 = DMatrix::from_fn(n, n, |i, j| dist[i][j] * dist[i][j]);
    let centering = DMatrix::<f64>::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
    let b = &centering * d2 * &centering * -0.5;
    let b = (&b + b.transpose()) * 0.5;
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &c| eig.eigenvalues[c].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&c)));
    let axis = |k: usize| -> Vec<f64> {
        let Some(&idx) = order.get(k) else {
            return vec![0.0; n];
        };
        let lambda = eig.eigenvalues[idx].max(0.0);
        let v = eig.eigenvectors.column(idx);
        // fix the sign so the largest component is positive
        let pivot = (0..n).fold(0, |best, i| if v[i].abs() > v[best].abs() { i } else { best });
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        (0..n).map(|i| sign * v[i] * lambda.sqrt()).collect()
    };
    let (x, y) = (axis(0), axis(1));
    x.into_iter().zip(y).collect()
}

/// Planar embedding of PB points by their Euclidean distances.
pub fn embed_pbs<T: Scalar>(pbs: &[PbVector<T>]) -> Vec<(f64, f64)> {
    let dist: Vec<Vec<f64>> = pbs
        .iter()
        .map(|a| pbs.iter().map(|b| a.distance(b).as_f64()).collect())
        .collect();
    classical_mds(&dist)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedEntry {
    pub entry: usize,
    pub concept: String,
    pub kind: EntryKind,
    pub x: f64,
    pub y: f64,
}

fn concept_name(names: &BTreeMap<ConceptId, String>, id: ConceptId) -> String {
    names.get(&id).cloned().unwrap_or_else(|| format!("concept{id}"))
}

pub fn embed_memory<T: Scalar>(mem: &Mem<T>, names: &BTreeMap<ConceptId, String>) -> Vec<EmbeddedEntry> {
    let pbs: Vec<PbVector<T>> = mem.entries.iter().map(|e| e.pb_rec.clone()).collect();
    embed_pbs(&pbs)
        .into_iter()
        .enumerate()
        .map(|(i, (x, y))| EmbeddedEntry {
            entry: i,
            concept: concept_name(names, mem.entries[i].concept()),
            kind: mem.entries[i].kind(),
            x,
            y,
        })
        .collect()
}

/// A pen trajectory generated by the network for one concept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegeneratedSample {
    pub concept: String,
    pub entry: usize,
    pub start: (f64, f64),
    /// One point per generated step, start excluded.
    pub points: Vec<(f64, f64)>,
}

/// For every concept, closed-loop generation from its entry with the lowest
/// generation error, denormalized and summed up from the start point.
pub fn regenerate_samples<T: Scalar>(mem: &Mem<T>, names: &BTreeMap<ConceptId, String>) -> Vec<RegeneratedSample> {
    mem.concepts()
        .into_iter()
        .map(|c| {
            let entry = mem
                .entries_of(c)
                .into_iter()
                .fold(None, |best: Option<usize>, i| match best {
                    Some(b) if mem.entries[b].generation_error <= mem.entries[i].generation_error => best,
                    _ => Some(i),
                })
                .expect("concept has an entry");
            let e = &mem.entries[entry];
            let generated = e.regenerate(&mem.weights);
            let path = reconstruct_path(&generated, &e.meta.initial_info, &mem.normalization);
            let pts: Vec<(f64, f64)> = path.iter().map(|(y, z)| (y.as_f64(), z.as_f64())).collect();
            RegeneratedSample {
                concept: concept_name(names, c),
                entry,
                start: pts[0],
                points: pts[1..].to_vec(),
            }
        })
        .collect()
}

/// Why a learning phase stopped early.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub message: String,
    pub divergence: bool,
}

impl Failure {
    pub fn new(context: impl std::fmt::Display, e: &Error) -> Self {
        Failure {
            message: format!("{context}: {e}"),
            divergence: e.is_divergence(),
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

/// Everything the learning phase produces.
#[derive(Debug, Clone)]
pub struct LearnOutcome<T> {
    pub mem: Mem<T>,
    pub teacher: OracleTeacher,
    pub episodes: Vec<EpisodeLog>,
    /// Set when an episode failed; `mem` is the memory before that episode.
    pub failure: Option<Failure>,
}

fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(fold as u64 + 1)
}

/// Seeded presentation order of the training demonstrations of a fold.
pub fn training_order(train: &[DemoId], seed: u64, fold: usize) -> Vec<DemoId> {
    let mut order = train.to_vec();
    order.sort();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(fold_seed(seed, fold)));
    order
}

fn lookup<'a, T>(index: &BTreeMap<&DemoId, &'a ProcessedDemo<T>>, id: &DemoId) -> Result<&'a ProcessedDemo<T>> {
    index.get(id).copied().ok_or_else(|| Error::UnknownDemo(id.to_string()))
}

/// Teaches the demonstrations one by one, in the given order, starting from
/// an empty memory.
pub fn learning_phase<T: Scalar>(
    demos: &[ProcessedDemo<T>],
    norm: &Normalization<T>,
    order: &[DemoId],
    params: &EngineParams,
    cfg: &NetConfig,
) -> Result<LearnOutcome<T>> {
    let index: BTreeMap<&DemoId, &ProcessedDemo<T>> = demos.iter().map(|d| (&d.id, d)).collect();
    let mut teacher = OracleTeacher::for_demos(demos);
    let mut mem = Mem::new(cfg.clone(), norm.clone());
    let mut episodes = Vec::with_capacity(order.len());
    for (k, id) in order.iter().enumerate() {
        let demo = lookup(&index, id)?;
        match process_episode(&mem, demo, &mut teacher, params, cfg, k) {
            Ok((next, log)) => {
                log::info!(
                    "episode {k}: {} ({}) -> {:?} after {} attempt(s), {} entries",
                    log.demo,
                    log.true_concept,
                    log.outcome,
                    log.attempts.len(),
                    log.n_prototypes
                );
                mem = next;
                episodes.push(log);
            }
            Err(e) => {
                log::error!("episode {k} ({id}) failed: {e}");
                return Ok(LearnOutcome {
                    mem,
                    teacher,
                    episodes,
                    failure: Some(Failure::new(format_args!("episode {k} ({id})"), &e)),
                });
            }
        }
    }
    Ok(LearnOutcome {
        mem,
        teacher,
        episodes,
        failure: None,
    })
}

/// Feedback-free classification of `ids` against a learned memory.
pub fn inference_phase<T: Scalar>(
    mem: &Mem<T>,
    names: &BTreeMap<ConceptId, String>,
    demos: &[ProcessedDemo<T>],
    ids: &[DemoId],
    cfg: &NetConfig,
) -> Result<Vec<InferenceRecord>> {
    let index: BTreeMap<&DemoId, &ProcessedDemo<T>> = demos.iter().map(|d| (&d.id, d)).collect();
    ids.par_iter()
        .map(|id| {
            let demo = lookup(&index, id)?;
            let inf = infer(mem, &demo.channels, cfg)?;
            Ok(InferenceRecord {
                demo: id.to_string(),
                true_concept: demo.concept_label.clone(),
                predicted: concept_name(names, inf.concept),
                predicted_id: inf.concept,
                confidence: inf.confidence,
                nearest_entry: inf.nearest,
            })
        })
        .collect()
}

/// Serializable result of one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_order: Vec<String>,
    pub episodes: Vec<EpisodeLog>,
    pub signal: Vec<i8>,
    pub records: Vec<InferenceRecord>,
    pub ccr: Option<f64>,
    pub failure: Option<Failure>,
    pub concept_names: BTreeMap<ConceptId, String>,
    pub embedding: Vec<EmbeddedEntry>,
    pub regenerated: Vec<RegeneratedSample>,
}

#[derive(Debug, Clone)]
pub struct FoldRun<T> {
    pub report: FoldReport,
    pub mem: Mem<T>,
}

/// Learning phase on the fold's training partition in seeded random order,
/// then classification of its test partition.
pub fn run_fold<T: Scalar>(
    demos: &[ProcessedDemo<T>],
    norm: &Normalization<T>,
    split: &FoldSplit,
    params: &EngineParams,
    cfg: &NetConfig,
    seed: u64,
) -> Result<FoldRun<T>> {
    let order = training_order(&split.train, seed, split.fold_index);
    let learned = learning_phase(demos, norm, &order, params, cfg)?;
    let names = learned.teacher.bindings().clone();
    let records = if learned.failure.is_none() {
        inference_phase(&learned.mem, &names, demos, &split.test, cfg)?
    } else {
        Vec::new()
    };
    let report = FoldReport {
        fold: split.fold_index,
        train_order: order.iter().map(|d| d.to_string()).collect(),
        signal: learned.teacher.signal_log().to_vec(),
        episodes: learned.episodes,
        ccr: if learned.failure.is_none() { ccr(&records) } else { None },
        records,
        failure: learned.failure,
        embedding: embed_memory(&learned.mem, &names),
        regenerated: regenerate_samples(&learned.mem, &names),
        concept_names: names,
    };
    Ok(FoldRun {
        report,
        mem: learned.mem,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub concepts: Vec<String>,
    pub folds: Vec<FoldReport>,
    pub ccr_mean: f64,
    pub ccr_std: f64,
    pub confusion: LabeledMatrix,
    pub confidence: LabeledMatrix,
}

impl EvalReport {
    pub fn completed_folds(&self) -> impl Iterator<Item = &FoldReport> {
        self.folds.iter().filter(|f| f.failure.is_none())
    }

    /// Recall per concept (diagonal of the averaged confusion matrix).
    pub fn recall(&self, concept: &str) -> Option<f64> {
        self.confusion.get(concept, concept)
    }

    pub fn reward_trend(&self) -> Option<f64> {
        let trends: Vec<f64> = self.completed_folds().filter_map(|f| reward_trend(&f.signal)).collect();
        (!trends.is_empty()).then(|| trends.iter().sum::<f64>() / trends.len() as f64)
    }
}

/// Aggregates fold reports: mean and sample standard deviation of the
/// per-fold rates and entry-wise averaged tables over completed folds.
pub fn aggregate(concepts: Vec<String>, folds: Vec<FoldReport>) -> Result<EvalReport> {
    let done: Vec<&FoldReport> = folds.iter().filter(|f| f.failure.is_none()).collect();
    let rates: Vec<f64> = done.iter().filter_map(|f| f.ccr).collect();
    let (ccr_mean, ccr_std) = mean_and_std(&rates);
    let mut confusions = Vec::new();
    let mut confidences = Vec::new();
    for f in &done {
        confusions.push(confusion_matrix(&f.records, &concepts)?);
        confidences.push(confidence_matrix(&f.records, &concepts)?);
    }
    let (confusion, confidence) = if done.is_empty() {
        (LabeledMatrix::empty(&concepts), LabeledMatrix::empty(&concepts))
    } else {
        (LabeledMatrix::average(&confusions)?, LabeledMatrix::average(&confidences)?)
    };
    Ok(EvalReport {
        concepts,
        folds,
        ccr_mean,
        ccr_std,
        confusion,
        confidence,
    })
}

/// Runs every fold (concurrently when `parallel`) and aggregates.
pub fn run_cv<T: Scalar>(
    demos: &[ProcessedDemo<T>],
    norm: &Normalization<T>,
    folds: &[FoldSplit],
    params: &EngineParams,
    cfg: &NetConfig,
    seed: u64,
    parallel: bool,
) -> Result<(EvalReport, Vec<Mem<T>>)> {
    let run = |split: &FoldSplit| run_fold(demos, norm, split, params, cfg, seed);
    let runs: Vec<FoldRun<T>> = if parallel {
        folds.par_iter().map(run).collect::<Result<_>>()?
    } else {
        folds.iter().map(run).collect::<Result<_>>()?
    };
    let mut concepts: Vec<String> = demos.iter().map(|d| d.concept_label.clone()).collect();
    concepts.sort();
    concepts.dedup();
    let (reports, mems): (Vec<_>, Vec<_>) = runs.into_iter().map(|r| (r.report, r.mem)).unzip();
    Ok((aggregate(concepts, reports)?, mems))
}
