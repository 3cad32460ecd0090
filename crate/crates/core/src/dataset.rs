//! Handwriting corpus ingestion, preprocessing and fold construction.
//!
//! A corpus directory holds one `<shape>.csv` per shape (header
//! `demo,t,y,z`) and a label map assigns every shape to a concept. Each
//! demonstration is smoothed, resampled by arc length, fitted into the arm
//! workspace, converted to joint angles and delta-encoded into six network
//! channels: two pen deltas followed by four joint-angle deltas.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{ArmModel, JointAngles, WorkspaceRect, NUM_JOINTS};
use crate::rnnpb::Channels;
use crate::scalar::Scalar;

pub const SENSORY_CHANNELS: usize = 2;
pub const CHANNELS: usize = SENSORY_CHANNELS + NUM_JOINTS;
pub const NUM_FOLDS: usize = 5;

/// Identifies one demonstration: shape name plus the demo index inside its file.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DemoId {
    pub shape: String,
    pub demo: usize,
}

impl DemoId {
    pub fn new(shape: impl Into<String>, demo: usize) -> Self {
        DemoId {
            shape: shape.into(),
            demo,
        }
    }
}

impl fmt::Display for DemoId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.shape, self.demo)
    }
}

impl std::str::FromStr for DemoId {
    type Err = Error;

    /// Parses `Shape#3`.
    fn from_str(s: &str) -> Result<Self> {
        s.rsplit_once('#')
            .and_then(|(shape, k)| Some(DemoId::new(shape, k.parse().ok()?)).filter(|_| !shape.is_empty()))
            .ok_or_else(|| Error::UnknownDemo(s.to_string()))
    }
}

/// A raw pen path in source units.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub shape_name: String,
    pub demo_index: usize,
    pub points: Vec<(f64, f64)>,
}

impl Trajectory {
    pub fn id(&self) -> DemoId {
        DemoId::new(self.shape_name.clone(), self.demo_index)
    }
}

/// Shape name to concept name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptLabelMap {
    pub entries: BTreeMap<String, String>,
}

impl ConceptLabelMap {
    /// Reads a `shape,concept` CSV.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Config(format!("label map {} not found", path.display())));
        }
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["shape", "concept"] {
            return Err(Error::Parse {
                file: path.to_path_buf(),
                line: 1,
                msg: format!("expected header shape,concept, found {:?}", headers),
            });
        }
        let mut entries = BTreeMap::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            if rec.len() != 2 || rec[0].is_empty() || rec[1].is_empty() {
                return Err(Error::Parse {
                    file: path.to_path_buf(),
                    line,
                    msg: "expected two non-empty fields".into(),
                });
            }
            if entries.insert(rec[0].to_string(), rec[1].to_string()).is_some() {
                return Err(Error::Parse {
                    file: path.to_path_buf(),
                    line,
                    msg: format!("shape {} listed twice", &rec[0]),
                });
            }
        }
        Ok(ConceptLabelMap { entries })
    }

    pub fn concept(&self, shape: &str) -> Option<&str> {
        self.entries.get(shape).map(String::as_str)
    }

    pub fn shapes(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Distinct concept names, sorted.
    pub fn concepts(&self) -> Vec<String> {
        let mut c: Vec<String> = self.entries.values().cloned().collect();
        c.sort();
        c.dedup();
        c
    }

    /// Keeps only the shapes whose concept is listed.
    pub fn restrict_to_concepts(&self, concepts: &[&str]) -> Self {
        ConceptLabelMap {
            entries: self
                .entries
                .iter()
                .filter(|(_, c)| concepts.contains(&c.as_str()))
                .map(|(s, c)| (s.clone(), c.clone()))
                .collect(),
        }
    }
}

/// Loads every shape named in `label_map` from `<dir>/<shape>.csv`.
pub fn load_corpus(dir: &Path, label_map: &ConceptLabelMap) -> Result<Vec<Trajectory>> {
    if label_map.entries.is_empty() {
        return Err(Error::CorpusIncomplete("label map lists no shapes".into()));
    }
    let mut corpus = Vec::new();
    for shape in label_map.shapes() {
        let file = dir.join(format!("{shape}.csv"));
        if !file.is_file() {
            return Err(Error::CorpusIncomplete(format!("missing shape file {}", file.display())));
        }
        corpus.extend(load_shape_file(&file, shape)?);
    }
    Ok(corpus)
}

fn load_shape_file(file: &Path, shape: &str) -> Result<Vec<Trajectory>> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        file: file.to_path_buf(),
        line,
        msg,
    };
    let mut reader = csv::Reader::from_path(file)?;
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["demo", "t", "y", "z"] {
        return Err(parse_err(1, format!("expected header demo,t,y,z, found {:?}", headers)));
    }
    let mut demos: Vec<Trajectory> = Vec::new();
    let mut last_t = f64::NEG_INFINITY;
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        if rec.len() != 4 {
            return Err(parse_err(line, format!("expected 4 fields, found {}", rec.len())));
        }
        let demo: usize = rec[0]
            .trim()
            .parse()
            .map_err(|e| parse_err(line, format!("bad demo index {:?}: {e}", &rec[0])))?;
        let mut nums = [0.0f64; 3];
        for (k, n) in nums.iter_mut().enumerate() {
            let field = rec[k + 1].trim();
            *n = field
                .parse()
                .map_err(|e| parse_err(line, format!("bad number {field:?}: {e}")))?;
            if !n.is_finite() {
                return Err(parse_err(line, format!("non-finite value {field:?}")));
            }
        }
        let [t, y, z] = nums;
        match demos.last_mut() {
            Some(d) if d.demo_index == demo => {
                if t < last_t {
                    return Err(parse_err(line, "rows not sorted by t".into()));
                }
                d.points.push((y, z));
            }
            Some(d) if d.demo_index > demo => {
                return Err(parse_err(line, "rows not sorted by demo".into()));
            }
            _ => demos.push(Trajectory {
                shape_name: shape.to_string(),
                demo_index: demo,
                points: vec![(y, z)],
            }),
        }
        last_t = t;
    }
    if demos.is_empty() {
        return Err(Error::CorpusIncomplete(format!("{} has no rows", file.display())));
    }
    for d in &demos {
        if d.points.len() < 2 {
            return Err(parse_err(0, format!("demo {} has fewer than two points", d.demo_index)));
        }
    }
    Ok(demos)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub smooth_window: usize,
    pub resample_len: usize,
    pub workspace: WorkspaceRect<f64>,
    pub arm: ArmModel<f64>,
    /// Network value range every channel is mapped onto.
    pub norm_range: (f64, f64),
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            smooth_window: 5,
            resample_len: 50,
            workspace: WorkspaceRect::default(),
            arm: ArmModel::default(),
            norm_range: (0.1, 0.9),
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.smooth_window == 0 {
            return Err(Error::Config("smooth_window must be at least 1".into()));
        }
        if self.resample_len < 3 {
            return Err(Error::Config("resample_len must be at least 3".into()));
        }
        let (lo, hi) = self.norm_range;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(Error::Config(format!("norm_range must satisfy 0 < lo < hi < 1, got {:?}", self.norm_range)));
        }
        self.arm.validate(&self.workspace)
    }
}

/// Absolute start configuration of a demonstration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialInfo<T> {
    pub y0: T,
    pub z0: T,
    pub q0: JointAngles<T>,
}

/// Result of steps 1-5 of the pipeline: unnormalized deltas plus the fitted path.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDemo<T> {
    pub id: DemoId,
    pub fitted: Vec<(T, T)>,
    pub joints: Vec<JointAngles<T>>,
    /// `(L - 1) x 6` raw deltas.
    pub deltas: Vec<[T; CHANNELS]>,
    pub initial: InitialInfo<T>,
}

/// Per-channel affine map from raw delta units into the network range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization<T> {
    pub min: [T; CHANNELS],
    pub max: [T; CHANNELS],
    pub lo: T,
    pub hi: T,
}

impl<T: Scalar> Normalization<T> {
    /// Corpus-wide min/max of every channel.
    pub fn fit(demos: &[EncodedDemo<T>], range: (f64, f64)) -> Self {
        let mut min = [T::infinity(); CHANNELS];
        let mut max = [T::neg_infinity(); CHANNELS];
        for d in demos {
            for row in &d.deltas {
                for c in 0..CHANNELS {
                    min[c] = min[c].min(row[c]);
                    max[c] = max[c].max(row[c]);
                }
            }
        }
        for c in 0..CHANNELS {
            if !min[c].is_finite() {
                min[c] = T::zero();
                max[c] = T::zero();
            }
        }
        Normalization {
            min,
            max,
            lo: T::of(range.0),
            hi: T::of(range.1),
        }
    }

    pub fn normalize(&self, c: usize, v: T) -> T {
        let span = self.max[c] - self.min[c];
        if span > T::zero() {
            self.lo + (v - self.min[c]) / span * (self.hi - self.lo)
        } else {
            (self.lo + self.hi) * T::half()
        }
    }

    pub fn denormalize(&self, c: usize, v: T) -> T {
        let span = self.max[c] - self.min[c];
        if span > T::zero() {
            self.min[c] + (v - self.lo) / (self.hi - self.lo) * span
        } else {
            self.min[c]
        }
    }
}

/// A preprocessed demonstration ready for the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessedDemo<T> {
    pub id: DemoId,
    /// Ground truth, read only by the oracle teacher and the evaluation.
    pub concept_label: String,
    /// `num_steps x 6` normalized deltas: (dy, dz, dq1..dq4).
    pub channels: Channels<T>,
    pub initial_info: InitialInfo<T>,
    pub num_steps: usize,
}

impl<T: Scalar> ProcessedDemo<T> {
    pub fn sensory_deltas(&self) -> Vec<[T; SENSORY_CHANNELS]> {
        self.channels.rows().map(|r| [r[0], r[1]]).collect()
    }

    pub fn motor_deltas(&self) -> Vec<JointAngles<T>> {
        self.channels.rows().map(|r| [r[2], r[3], r[4], r[5]]).collect()
    }

    /// Absolute pen path rebuilt by summing denormalized deltas from the start point.
    pub fn reconstruct_path(&self, norm: &Normalization<T>) -> Vec<(T, T)> {
        reconstruct_path(&self.channels, &self.initial_info, norm)
    }
}

/// Cumulative sum of denormalized pen deltas from `initial`; yields `steps + 1` points.
pub fn reconstruct_path<T: Scalar>(channels: &Channels<T>, initial: &InitialInfo<T>, norm: &Normalization<T>) -> Vec<(T, T)> {
    let mut path = Vec::with_capacity(channels.steps() + 1);
    let (mut y, mut z) = (initial.y0, initial.z0);
    path.push((y, z));
    for row in channels.rows() {
        y += norm.denormalize(0, row[0]);
        z += norm.denormalize(1, row[1]);
        path.push((y, z));
    }
    path
}

/// Centered moving average; the window shrinks symmetrically at the ends.
pub fn smooth<T: Scalar>(points: &[(T, T)], window: usize) -> Vec<(T, T)> {
    let half = window.saturating_sub(1) / 2;
    let n = points.len();
    (0..n)
        .map(|i| {
            let r = half.min(i).min(n - 1 - i);
            let seg = &points[i - r..=i + r];
            let k = T::of(seg.len() as f64);
            let (sy, sz) = seg.iter().fold((T::zero(), T::zero()), |(a, b), p| (a + p.0, b + p.1));
            (sy / k, sz / k)
        })
        .collect()
}

/// Uniform arc-length resampling to `len` points by linear interpolation.
/// Zero-length segments are dropped first.
pub fn resample<T: Scalar>(points: &[(T, T)], len: usize) -> Result<Vec<(T, T)>> {
    let mut pts: Vec<(T, T)> = Vec::with_capacity(points.len());
    for &p in points {
        if pts.last().map_or(true, |q: &(T, T)| (p.0 - q.0).hypot(p.1 - q.1) > T::zero()) {
            pts.push(p);
        }
    }
    if pts.len() < 2 {
        return Err(Error::DegenerateInput("all points identical".into()));
    }
    let mut cum = Vec::with_capacity(pts.len());
    cum.push(T::zero());
    for w in pts.windows(2) {
        let d = (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
        cum.push(*cum.last().unwrap() + d);
    }
    let total = *cum.last().unwrap();
    let mut out = Vec::with_capacity(len);
    let mut seg = 0;
    for i in 0..len {
        let s = total * T::of(i as f64) / T::of((len - 1) as f64);
        while seg + 2 < cum.len() && cum[seg + 1] < s {
            seg += 1;
        }
        let span = cum[seg + 1] - cum[seg];
        let f = ((s - cum[seg]) / span).max(T::zero()).min(T::one());
        let (a, b) = (pts[seg], pts[seg + 1]);
        out.push((a.0 + (b.0 - a.0) * f, a.1 + (b.1 - a.1) * f));
    }
    *out.last_mut().unwrap() = *pts.last().unwrap();
    Ok(out)
}

/// Isotropic scale and translation placing the bounding box of `points`
/// centered inside `ws`, touching it on the tighter axis.
pub fn fit_to_workspace<T: Scalar>(points: &[(T, T)], ws: &WorkspaceRect<T>) -> Result<Vec<(T, T)>> {
    let (mut ymin, mut ymax, mut zmin, mut zmax) = (T::infinity(), T::neg_infinity(), T::infinity(), T::neg_infinity());
    for &(y, z) in points {
        ymin = ymin.min(y);
        ymax = ymax.max(y);
        zmin = zmin.min(z);
        zmax = zmax.max(z);
    }
    let (w, h) = (ymax - ymin, zmax - zmin);
    let scale = match (w > T::zero(), h > T::zero()) {
        (true, true) => (ws.width() / w).min(ws.height() / h),
        (true, false) => ws.width() / w,
        (false, true) => ws.height() / h,
        (false, false) => return Err(Error::DegenerateInput("zero-extent trajectory".into())),
    };
    let (cy, cz) = ws.center();
    let (my, mz) = ((ymin + ymax) * T::half(), (zmin + zmax) * T::half());
    Ok(points
        .iter()
        .map(|&(y, z)| (cy + (y - my) * scale, cz + (z - mz) * scale))
        .collect())
}

/// Steps 1-5: smooth, resample, fit, inverse kinematics, first differences.
pub fn encode<T: Scalar>(t: &Trajectory, cfg: &PreprocessConfig) -> Result<EncodedDemo<T>> {
    let raw: Vec<(T, T)> = t.points.iter().map(|&(y, z)| (T::of(y), T::of(z))).collect();
    if raw.iter().all(|p| *p == raw[0]) {
        return Err(Error::DegenerateInput(format!("{}: all points identical", t.id())));
    }
    let smoothed = smooth(&raw, cfg.smooth_window);
    let resampled = resample(&smoothed, cfg.resample_len)?;
    let ws = WorkspaceRect {
        y_range: (T::of(cfg.workspace.y_range.0), T::of(cfg.workspace.y_range.1)),
        z_range: (T::of(cfg.workspace.z_range.0), T::of(cfg.workspace.z_range.1)),
    };
    let fitted = fit_to_workspace(&resampled, &ws)?;
    let arm = cfg.arm.cast::<T>();
    let joints = arm.inverse_path(&fitted)?;
    let deltas = fitted
        .windows(2)
        .zip(joints.windows(2))
        .map(|(p, q)| {
            let mut row = [T::zero(); CHANNELS];
            row[0] = p[1].0 - p[0].0;
            row[1] = p[1].1 - p[0].1;
            for k in 0..NUM_JOINTS {
                row[SENSORY_CHANNELS + k] = q[1][k] - q[0][k];
            }
            row
        })
        .collect();
    let initial = InitialInfo {
        y0: fitted[0].0,
        z0: fitted[0].1,
        q0: joints[0],
    };
    Ok(EncodedDemo {
        id: t.id(),
        fitted,
        joints,
        deltas,
        initial,
    })
}

/// Step 6: map every channel into the network range.
pub fn normalize_demo<T: Scalar>(enc: &EncodedDemo<T>, concept: &str, norm: &Normalization<T>) -> ProcessedDemo<T> {
    let mut data = Vec::with_capacity(enc.deltas.len() * CHANNELS);
    for row in &enc.deltas {
        for (c, v) in row.iter().enumerate() {
            data.push(norm.normalize(c, *v));
        }
    }
    ProcessedDemo {
        id: enc.id.clone(),
        concept_label: concept.to_string(),
        channels: Channels::new(CHANNELS, data),
        initial_info: enc.initial,
        num_steps: enc.deltas.len(),
    }
}

/// Full pipeline for one trajectory under a given normalization.
pub fn preprocess<T: Scalar>(
    t: &Trajectory,
    cfg: &PreprocessConfig,
    concept: &str,
    norm: &Normalization<T>,
) -> Result<ProcessedDemo<T>> {
    Ok(normalize_demo(&encode(t, cfg)?, concept, norm))
}

/// Preprocesses a corpus with a normalization fitted to the whole corpus.
pub fn preprocess_corpus<T: Scalar>(
    corpus: &[Trajectory],
    labels: &ConceptLabelMap,
    cfg: &PreprocessConfig,
) -> Result<(Vec<ProcessedDemo<T>>, Normalization<T>)> {
    cfg.validate()?;
    let encoded = corpus.iter().map(|t| encode::<T>(t, cfg)).collect::<Result<Vec<_>>>()?;
    let norm = Normalization::fit(&encoded, cfg.norm_range);
    let demos = encoded
        .iter()
        .map(|e| {
            let concept = labels
                .concept(&e.id.shape)
                .ok_or_else(|| Error::Config(format!("shape {} has no concept", e.id.shape)))?;
            Ok(normalize_demo(e, concept, &norm))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((demos, norm))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub train: Vec<DemoId>,
    pub test: Vec<DemoId>,
}

/// Per shape, shuffles the demos with a seeded generator and cuts them into
/// five near-equal partitions (larger ones first). Fold k trains on
/// partition k of every shape and tests on the rest.
pub fn make_folds(ids: &[DemoId], seed: u64) -> Result<Vec<FoldSplit>> {
    let mut by_shape: BTreeMap<&str, Vec<DemoId>> = BTreeMap::new();
    for id in ids {
        by_shape.entry(id.shape.as_str()).or_default().push(id.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds: Vec<FoldSplit> = (0..NUM_FOLDS)
        .map(|k| FoldSplit {
            fold_index: k,
            train: Vec::new(),
            test: Vec::new(),
        })
        .collect();
    for (shape, mut demos) in by_shape {
        if demos.len() < NUM_FOLDS {
            return Err(Error::Config(format!(
                "shape {shape} has {} demos, five-fold splitting needs at least {NUM_FOLDS}",
                demos.len()
            )));
        }
        demos.sort();
        demos.shuffle(&mut rng);
        let parts = partition_sizes(demos.len(), NUM_FOLDS);
        let mut start = 0;
        for (k, size) in parts.iter().enumerate() {
            let part = &demos[start..start + size];
            for (j, fold) in folds.iter_mut().enumerate() {
                if j == k {
                    fold.train.extend_from_slice(part);
                } else {
                    fold.test.extend_from_slice(part);
                }
            }
            start += size;
        }
    }
    Ok(folds)
}

/// Sizes of `parts` near-equal partitions of `n`, larger first.
pub fn partition_sizes(n: usize, parts: usize) -> Vec<usize> {
    (0..parts).map(|k| n / parts + usize::from(k < n % parts)).collect()
}
