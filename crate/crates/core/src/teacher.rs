//! Programmatic teacher that answers every executed action from ground-truth
//! labels, and the reward series it produces.

use std::collections::BTreeMap;
use std::io::Write;

use crate::dataset::{DemoId, ProcessedDemo};
use crate::error::{Error, Result};
use crate::memory::ConceptId;

/// Trailing window used for the smoothed reward curve.
pub const SIGNAL_WINDOW: usize = 7;

/// The learner invents concept ids; when it creates one, the teacher tells
/// it which concept the founding demonstration shows, and from then on a
/// guess is rewarded iff the id is bound to the demonstration's true label.
#[derive(Debug, Clone, Default)]
pub struct OracleTeacher {
    labels: BTreeMap<DemoId, String>,
    bindings: BTreeMap<ConceptId, String>,
    log: Vec<i8>,
}

impl OracleTeacher {
    pub fn new(labels: impl IntoIterator<Item = (DemoId, String)>) -> Self {
        OracleTeacher {
            labels: labels.into_iter().collect(),
            ..Default::default()
        }
    }

    pub fn for_demos<T>(demos: &[ProcessedDemo<T>]) -> Self {
        Self::new(demos.iter().map(|d| (d.id.clone(), d.concept_label.clone())))
    }

    pub fn true_label(&self, demo: &DemoId) -> Result<&str> {
        self.labels
            .get(demo)
            .map(String::as_str)
            .ok_or_else(|| Error::UnknownDemo(demo.to_string()))
    }

    /// Names a freshly created concept after the demonstration that founded it.
    pub fn bind(&mut self, concept: ConceptId, founder: &DemoId) -> Result<()> {
        let label = self.true_label(founder)?.to_string();
        self.bindings.insert(concept, label);
        Ok(())
    }

    pub fn concept_name(&self, concept: ConceptId) -> Option<&str> {
        self.bindings.get(&concept).map(String::as_str)
    }

    pub fn bindings(&self) -> &BTreeMap<ConceptId, String> {
        &self.bindings
    }

    /// +1 when `guess` names the demonstration's true concept, -1 otherwise.
    /// Every call is appended to the signal log.
    pub fn feedback(&mut self, demo: &DemoId, guess: ConceptId) -> Result<i8> {
        let truth = self.true_label(demo)?;
        let signal = if self.bindings.get(&guess).map(String::as_str) == Some(truth) {
            1
        } else {
            -1
        };
        self.log.push(signal);
        Ok(signal)
    }

    pub fn signal_log(&self) -> &[i8] {
        &self.log
    }
}

/// Backward moving average; the window is truncated at the start.
pub fn smoothed_signal(log: &[i8], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(log.len());
    let mut sum = 0i64;
    for i in 0..log.len() {
        sum += i64::from(log[i]);
        if i >= window {
            sum -= i64::from(log[i - window]);
        }
        out.push(sum as f64 / (i + 1).min(window) as f64);
    }
    out
}

/// `interaction,raw,smoothed`
pub fn write_signal_csv<W: Write>(log: &[i8], window: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["interaction", "raw", "smoothed"])?;
    for (i, (raw, s)) in log.iter().zip(smoothed_signal(log, window)).enumerate() {
        w.write_record([i.to_string(), raw.to_string(), s.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
