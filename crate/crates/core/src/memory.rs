//! Long-term memory: the shared network plus every consolidated exemplar and
//! prototype, and the rehearsal procedure that keeps them all learnable.
//!
//! Raw demonstrations are not kept. Each rehearsal regenerates every stored
//! pattern from the network, appends the new ones and retrains from the
//! current weights.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DemoId, InitialInfo, Normalization, ProcessedDemo};
use crate::error::{Error, Result};
use crate::persist;
use crate::rnnpb::{recognize, train, Channels, NetConfig, NetWeights, PbVector};
use crate::scalar::Scalar;

/// Learner-side concept identifier. Names are only known to the teacher.
pub type ConceptId = u32;

pub const SNAPSHOT_FORMAT: &str = "iloci-mem";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Exemplar,
    Prototype,
}

impl EntryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EntryKind::Exemplar => "exemplar",
            EntryKind::Prototype => "prototype",
        }
    }
}

/// Everything about a pattern except the network-dependent parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryMeta<T> {
    pub num_samples: usize,
    pub num_steps: usize,
    /// Absolute start configuration, in workspace units and radians.
    pub initial_info: InitialInfo<T>,
    /// First normalized frame; seeds closed-loop regeneration.
    pub initial_input: Vec<T>,
    pub concept: ConceptId,
    pub kind: EntryKind,
    /// Demonstration that created the entry.
    pub origin: DemoId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemEntry<T> {
    pub pb: PbVector<T>,
    /// Internal PB potentials behind `pb`; warm start for the next rehearsal.
    pub potentials: Vec<T>,
    pub pb_rec: PbVector<T>,
    pub generation_error: T,
    pub meta: EntryMeta<T>,
}

impl<T: Scalar> MemEntry<T> {
    pub fn concept(&self) -> ConceptId {
        self.meta.concept
    }

    pub fn kind(&self) -> EntryKind {
        self.meta.kind
    }

    pub fn num_samples(&self) -> usize {
        self.meta.num_samples
    }

    /// Closed-loop regeneration of the stored pattern.
    pub fn regenerate(&self, weights: &NetWeights<T>) -> Channels<T> {
        weights.regenerate(&self.pb, &self.meta.initial_input, self.meta.num_steps)
    }
}

/// A pattern waiting in temporal storage during a rehearsal.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalPattern<T> {
    pub channels: Channels<T>,
    pub potentials: Vec<T>,
    pub meta: EntryMeta<T>,
}

impl<T: Scalar> TemporalPattern<T> {
    /// A demonstration entering memory for the first time.
    pub fn from_demo(demo: &ProcessedDemo<T>, concept: ConceptId, kind: EntryKind, pb_dim: usize) -> Self {
        TemporalPattern {
            channels: demo.channels.clone(),
            potentials: vec![T::zero(); pb_dim],
            meta: EntryMeta {
                num_samples: 1,
                num_steps: demo.channels.steps(),
                initial_info: demo.initial_info,
                initial_input: demo.channels.row(0).to_vec(),
                concept,
                kind,
                origin: demo.id.clone(),
            },
        }
    }
}

/// Temporal storage; lives only for the duration of one rehearsal.
pub type TemporalMemory<T> = Vec<TemporalPattern<T>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mem<T> {
    pub n_prototypes: usize,
    pub config: NetConfig,
    pub weights: NetWeights<T>,
    pub entries: Vec<MemEntry<T>>,
    pub normalization: Normalization<T>,
    pub next_concept_id: ConceptId,
}

/// Mean squared error of `generated` against `pattern` over the predicted
/// frames (the first frame is the seed and always matches).
pub fn generation_error<T: Scalar>(generated: &Channels<T>, pattern: &Channels<T>) -> T {
    let dim = pattern.dim();
    let a = &generated.as_slice()[dim.min(generated.as_slice().len())..];
    let b = &pattern.as_slice()[dim.min(pattern.as_slice().len())..];
    assert_eq!(a.len(), b.len(), "pattern lengths differ");
    if a.is_empty() {
        return T::zero();
    }
    let sse: T = a.iter().zip(b).map(|(x, y)| (*x - *y) * (*x - *y)).sum();
    sse / T::of(a.len() as f64)
}

impl<T: Scalar> Mem<T> {
    /// Empty memory with freshly initialized weights.
    pub fn new(config: NetConfig, normalization: Normalization<T>) -> Self {
        Mem {
            n_prototypes: 0,
            weights: NetWeights::init(&config),
            config,
            entries: Vec::new(),
            normalization,
            next_concept_id: 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn allocate_concept(&mut self) -> ConceptId {
        let id = self.next_concept_id;
        self.next_concept_id += 1;
        id
    }

    /// Distinct concepts present, ascending.
    pub fn concepts(&self) -> Vec<ConceptId> {
        let mut c: Vec<_> = self.entries.iter().map(|e| e.concept()).collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn entries_of(&self, concept: ConceptId) -> Vec<usize> {
        (0..self.entries.len()).filter(|&i| self.entries[i].concept() == concept).collect()
    }

    pub fn check_invariants(&self) -> Result<()> {
        if self.n_prototypes != self.entries.len() {
            return Err(Error::Contract(format!(
                "n_prototypes {} != {} entries",
                self.n_prototypes,
                self.entries.len()
            )));
        }
        for (i, e) in self.entries.iter().enumerate() {
            let finite = e.generation_error.is_finite()
                && e.pb.0.iter().chain(&e.pb_rec.0).chain(&e.potentials).all(|v| v.is_finite());
            if !finite || e.meta.num_samples == 0 {
                return Err(Error::Contract(format!("entry {i} is malformed")));
            }
        }
        if !self.weights.is_finite() {
            return Err(Error::Contract("non-finite weights".into()));
        }
        Ok(())
    }

    /// Counter increment on a matched entry; the network is untouched.
    pub fn strengthen(&mut self, index: usize) -> Result<()> {
        let len = self.entries.len();
        let e = self.entries.get_mut(index).ok_or(Error::IndexOutOfRange { index, len })?;
        e.meta.num_samples += 1;
        Ok(())
    }

    /// Collapses each cluster onto its medoid without retraining: the
    /// medoid becomes a prototype carrying the members' total sample count
    /// and the other members are dropped.
    pub fn absorb_clusters(&mut self, clusters: &[(Vec<usize>, usize)]) -> Result<()> {
        let len = self.entries.len();
        let mut drop = vec![false; len];
        let mut seen = vec![false; len];
        for (members, medoid) in clusters {
            if !members.contains(medoid) {
                return Err(Error::Contract(format!("medoid {medoid} is not a cluster member")));
            }
            if let Some(&bad) = members.iter().find(|&&m| m >= len) {
                return Err(Error::IndexOutOfRange { index: bad, len });
            }
            let concept = self.entries[*medoid].concept();
            if members.iter().any(|&m| self.entries[m].concept() != concept) {
                return Err(Error::Contract("cluster mixes concepts".into()));
            }
            for &m in members {
                if std::mem::replace(&mut seen[m], true) {
                    return Err(Error::Contract("clusters overlap".into()));
                }
            }
        }
        for (members, medoid) in clusters {
            let total: usize = members.iter().map(|&m| self.entries[m].num_samples()).sum();
            for &m in members {
                drop[m] = m != *medoid;
            }
            let e = &mut self.entries[*medoid];
            e.meta.num_samples = total;
            e.meta.kind = EntryKind::Prototype;
        }
        let mut keep = drop.iter().map(|d| !d);
        self.entries.retain(|_| keep.next().unwrap());
        self.n_prototypes = self.entries.len();
        Ok(())
    }

    /// Medoid substitution for one cluster followed by a rehearsal of the
    /// surviving entries.
    pub fn substitute_medoid(&self, members: &[usize], medoid: usize, cfg: &NetConfig) -> Result<Mem<T>> {
        let mut next = self.clone();
        next.absorb_clusters(&[(members.to_vec(), medoid)])?;
        next.rehearse(Vec::new(), cfg)
    }

    /// Regenerates every stored pattern into temporal storage.
    pub fn temporal_memory(&self) -> TemporalMemory<T> {
        self.entries
            .iter()
            .map(|e| TemporalPattern {
                channels: e.regenerate(&self.weights),
                potentials: e.potentials.clone(),
                meta: e.meta.clone(),
            })
            .collect()
    }

    /// Memory rehearsal. Returns the consolidated memory; on failure `self`
    /// is untouched.
    pub fn rehearse(&self, new: Vec<TemporalPattern<T>>, cfg: &NetConfig) -> Result<Mem<T>> {
        let mut temporal = self.temporal_memory();
        temporal.extend(new);
        if temporal.is_empty() {
            return Err(Error::Contract("rehearsal with nothing to learn".into()));
        }
        let batch: Vec<Channels<T>> = temporal.iter().map(|p| p.channels.clone()).collect();
        let potentials: Vec<Vec<T>> = temporal.iter().map(|p| p.potentials.clone()).collect();
        let outcome = train(&self.weights, &batch, &potentials, cfg).map_err(|e| Error::RehearsalFailed(Box::new(e)))?;
        log::debug!(
            "rehearsal over {} patterns: {} epochs, mse {:.3e} -> {:.3e}",
            temporal.len(),
            outcome.epochs,
            outcome.initial_mse.as_f64(),
            outcome.final_mse.as_f64()
        );
        let weights = outcome.weights;
        let rebuilt: Vec<Result<MemEntry<T>>> = temporal
            .into_par_iter()
            .zip(outcome.potentials.into_par_iter())
            .map(|(pattern, u)| {
                let pb = PbVector::from_potentials(&u);
                let generated = weights.regenerate(&pb, &pattern.meta.initial_input, pattern.meta.num_steps);
                let rec = recognize(&weights, &generated, cfg)?;
                Ok(MemEntry {
                    generation_error: generation_error(&generated, &pattern.channels),
                    pb,
                    potentials: u,
                    pb_rec: rec.pb,
                    meta: pattern.meta,
                })
            })
            .collect();
        let entries = rebuilt
            .into_iter()
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::RehearsalFailed(Box::new(e)))?;
        Ok(Mem {
            n_prototypes: entries.len(),
            config: self.config.clone(),
            weights,
            entries,
            normalization: self.normalization.clone(),
            next_concept_id: self.next_concept_id,
        })
    }

    pub fn snapshot(&self, path: &Path) -> Result<String> {
        persist::save(path, SNAPSHOT_FORMAT, self)
    }

    pub fn restore(path: &Path) -> Result<Self> {
        let mem: Mem<T> = persist::load(path, SNAPSHOT_FORMAT)?;
        mem.check_invariants()?;
        Ok(mem)
    }

    /// Entry table as CSV: `index,origin,concept,kind,num_samples,num_steps,generation_error,pb,pb_rec`.
    pub fn write_entries_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index", "origin", "concept", "kind", "num_samples", "num_steps", "generation_error", "pb", "pb_rec"])?;
        let join = |v: &PbVector<T>| v.0.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(" ");
        for (i, e) in self.entries.iter().enumerate() {
            w.write_record([
                i.to_string(),
                e.meta.origin.to_string(),
                e.concept().to_string(),
                e.kind().as_str().to_string(),
                e.num_samples().to_string(),
                e.meta.num_steps.to_string(),
                format!("{}", e.generation_error),
                join(&e.pb),
                join(&e.pb_rec),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
