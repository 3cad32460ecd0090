//! The interactive learning loop and the feedback-free inference.
//!
//! An observed demonstration is recognized into a PB point, compared with
//! the recognition PBs of the consolidated entries, and the nearest untried
//! concept is acted out. Reward either strengthens the matched entry or adds
//! a new exemplar; punishment moves on to the next concept; running out of
//! concepts creates a new one.

use serde::{Deserialize, Serialize};

use crate::clustering::{cluster_concept, ClusterItem, ValidCluster};
use crate::dataset::ProcessedDemo;
use crate::error::{Error, Result};
use crate::memory::{generation_error, ConceptId, EntryKind, Mem, TemporalPattern};
use crate::rnnpb::{recognize, Channels, NetConfig, PbVector};
use crate::scalar::Scalar;
use crate::teacher::OracleTeacher;

/// Confidence reported when there is no competing concept or the nearest
/// entry sits exactly on the observation.
pub const CONFIDENCE_CAP: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineParams {
    pub k_cutoff: f64,
    pub num_threshold: usize,
    pub similarity_threshold: f64,
}

impl Default for EngineParams {
    fn default() -> Self {
        EngineParams {
            k_cutoff: 0.5,
            num_threshold: 3,
            similarity_threshold: 0.1,
        }
    }
}

impl EngineParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.k_cutoff.is_finite()
            && self.k_cutoff > 0.0
            && self.num_threshold > 0
            && self.similarity_threshold.is_finite()
            && self.similarity_threshold > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("engine parameters must be positive: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Guess<T> {
    pub concept: ConceptId,
    /// Entry whose recognition PB is nearest to the observation.
    pub matched: usize,
    pub distance: T,
    /// Entry of the concept with the lowest generation error; the one acted out.
    pub action: usize,
}

/// Nearest untried concept, or `None` once every concept in memory was tried.
pub fn guess_concept<T: Scalar>(mem: &Mem<T>, pb_obs: &PbVector<T>, tried: &[ConceptId]) -> Option<Guess<T>> {
    let (matched, distance) = mem
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| !tried.contains(&e.concept()))
        .map(|(i, e)| (i, pb_obs.distance(&e.pb_rec)))
        .fold(None, |best: Option<(usize, T)>, (i, d)| match best {
            Some((_, bd)) if bd <= d => best,
            _ => Some((i, d)),
        })?;
    let concept = mem.entries[matched].concept();
    let action = mem
        .entries_of(concept)
        .into_iter()
        .fold(None, |best: Option<usize>, i| match best {
            Some(b) if mem.entries[b].generation_error <= mem.entries[i].generation_error => best,
            _ => Some(i),
        })
        .expect("concept has an entry");
    Some(Guess {
        concept,
        matched,
        distance,
        action,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Strengthened,
    NewPrototype,
    NewConcept,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub concept: ConceptId,
    pub matched_entry: usize,
    pub distance: f64,
    pub action_entry: usize,
    /// Error of the acted-out trajectory against the observed one; absent
    /// when their lengths differ.
    pub action_error: Option<f64>,
    pub feedback: i8,
}

/// One line of the episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub demo: String,
    pub true_concept: String,
    pub pb_obs: Vec<f64>,
    pub attempts: Vec<Attempt>,
    pub rewards: Vec<i8>,
    pub outcome: Outcome,
    /// Concept the demonstration ended up in.
    pub concept: ConceptId,
    pub clustering_triggered: bool,
    pub clusters_formed: usize,
    pub n_prototypes: usize,
}

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

/// Clusters `concept` when its entries hold more than `num_threshold`
/// samples, collapses every valid cluster onto its medoid and rehearses once.
/// Returns the new memory, whether clustering ran and the clusters applied.
pub fn maybe_cluster<T: Scalar>(
    mem: &Mem<T>,
    concept: ConceptId,
    params: &EngineParams,
    cfg: &NetConfig,
) -> Result<(Mem<T>, bool, Vec<ValidCluster<T>>)> {
    let members = mem.entries_of(concept);
    let total: usize = members.iter().map(|&i| mem.entries[i].num_samples()).sum();
    if total <= params.num_threshold {
        return Ok((mem.clone(), false, Vec::new()));
    }
    let items: Vec<ClusterItem<T>> = members
        .iter()
        .map(|&i| ClusterItem {
            index: i,
            pb: mem.entries[i].pb_rec.clone(),
            num_samples: mem.entries[i].num_samples(),
            kind: mem.entries[i].kind(),
        })
        .collect();
    let clusters = cluster_concept(&items, params.k_cutoff, params.num_threshold);
    if clusters.is_empty() {
        return Ok((mem.clone(), true, clusters));
    }
    let mut next = mem.clone();
    let groups: Vec<(Vec<usize>, usize)> = clusters.iter().map(|c| (c.members.clone(), c.medoid)).collect();
    next.absorb_clusters(&groups)?;
    let next = next.rehearse(Vec::new(), cfg)?;
    Ok((next, true, clusters))
}

/// Runs one teaching episode for `demo`. The input memory is never
/// modified; the updated one is returned with the episode record.
pub fn process_episode<T: Scalar>(
    mem: &Mem<T>,
    demo: &ProcessedDemo<T>,
    teacher: &mut OracleTeacher,
    params: &EngineParams,
    cfg: &NetConfig,
    episode: usize,
) -> Result<(Mem<T>, EpisodeLog)> {
    let true_concept = teacher.true_label(&demo.id)?.to_string();
    let pb_obs = if mem.is_empty() {
        PbVector::neutral(cfg.pb_dim)
    } else {
        recognize(&mem.weights, &demo.channels, cfg)?.pb
    };
    let mut tried: Vec<ConceptId> = Vec::new();
    let mut attempts = Vec::new();
    let log = |attempts: Vec<Attempt>, outcome, concept, triggered, formed, next: &Mem<T>| EpisodeLog {
        episode,
        demo: demo.id.to_string(),
        true_concept: true_concept.clone(),
        pb_obs: to_f64(&pb_obs.0),
        rewards: attempts.iter().map(|a: &Attempt| a.feedback).collect(),
        attempts,
        outcome,
        concept,
        clustering_triggered: triggered,
        clusters_formed: formed,
        n_prototypes: next.n_prototypes,
    };
    while let Some(guess) = guess_concept(mem, &pb_obs, &tried) {
        let acted = mem.entries[guess.action].regenerate(&mem.weights);
        let action_error = (acted.steps() == demo.channels.steps()).then(|| generation_error(&acted, &demo.channels).as_f64());
        let feedback = teacher.feedback(&demo.id, guess.concept)?;
        attempts.push(Attempt {
            concept: guess.concept,
            matched_entry: guess.matched,
            distance: guess.distance.as_f64(),
            action_entry: guess.action,
            action_error,
            feedback,
        });
        if feedback < 0 {
            tried.push(guess.concept);
            continue;
        }
        if guess.distance <= T::of(params.similarity_threshold) {
            let mut next = mem.clone();
            next.strengthen(guess.matched)?;
            let record = log(attempts, Outcome::Strengthened, guess.concept, false, 0, &next);
            return Ok((next, record));
        }
        let pattern = TemporalPattern::from_demo(demo, guess.concept, EntryKind::Exemplar, cfg.pb_dim);
        let grown = mem.rehearse(vec![pattern], cfg)?;
        let (next, triggered, clusters) = maybe_cluster(&grown, guess.concept, params, cfg)?;
        let record = log(attempts, Outcome::NewPrototype, guess.concept, triggered, clusters.len(), &next);
        return Ok((next, record));
    }
    let mut next = mem.clone();
    let concept = next.allocate_concept();
    teacher.bind(concept, &demo.id)?;
    let pattern = TemporalPattern::from_demo(demo, concept, EntryKind::Exemplar, cfg.pb_dim);
    let next = next.rehearse(vec![pattern], cfg)?;
    let record = log(attempts, Outcome::NewConcept, concept, false, 0, &next);
    Ok((next, record))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inference<T> {
    pub concept: ConceptId,
    pub confidence: f64,
    pub pb_obs: PbVector<T>,
    pub nearest: usize,
}

/// Margin ratio `d2 / d1 - 1` between the nearest entry and the nearest
/// entry of any other concept, capped at [`CONFIDENCE_CAP`].
pub fn confidence<T: Scalar>(d1: T, d2: Option<T>) -> f64 {
    match d2 {
        Some(d2) if d1 > T::zero() => (d2 / d1 - T::one()).as_f64().min(CONFIDENCE_CAP),
        _ => CONFIDENCE_CAP,
    }
}

/// Classifies a sequence by the concept of the nearest recognition PB.
/// Memory is read only.
pub fn infer<T: Scalar>(mem: &Mem<T>, channels: &Channels<T>, cfg: &NetConfig) -> Result<Inference<T>> {
    if mem.is_empty() {
        return Err(Error::EmptyMemory);
    }
    let pb_obs = recognize(&mem.weights, channels, cfg)?.pb;
    let guess = guess_concept(mem, &pb_obs, &[]).expect("memory is not empty");
    let d2 = guess_concept(mem, &pb_obs, &[guess.concept]).map(|g| g.distance);
    Ok(Inference {
        concept: guess.concept,
        confidence: confidence(guess.distance, d2),
        pb_obs,
        nearest: guess.matched,
    })
}
