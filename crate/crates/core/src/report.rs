//! Report bundle: CSV tables and small self-contained SVG plots.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use std::collections::BTreeMap;
use std::io::{BufWriter, Write};

use crate::concept_engine::EpisodeLog;
use crate::dataset::FoldSplit;
use crate::error::{Error, Result};
use crate::evaluation::{EvalReport, FoldReport, InferenceRecord, LabeledMatrix, RegeneratedSample};
use crate::memory::ConceptId;
use crate::teacher::{smoothed_signal, write_signal_csv, SIGNAL_WINDOW};

pub const CCR_CSV: &str = "ccr.csv";
pub const CONFUSION_CSV: &str = "confusion.csv";
pub const CONFIDENCE_CSV: &str = "confidence.csv";
pub const REWARD_CSV: &str = "reward.csv";
pub const EMBEDDING_CSV: &str = "pb_embedding.csv";
pub const REGENERATED_DIR: &str = "regenerated";
pub const REWARD_SVG: &str = "reward.svg";
pub const EMBEDDING_SVG: &str = "pb_embedding.svg";
pub const REGENERATED_SVG: &str = "regenerated.svg";

pub const EVAL_JSON: &str = "eval.json";
pub const EPISODES_JSONL: &str = "episodes.jsonl";
pub const SIGNAL_CSV: &str = "signal.csv";
pub const CONCEPT_NAMES_CSV: &str = "concept_names.csv";
pub const ENTRIES_CSV: &str = "entries.csv";
pub const INFERENCE_CSV: &str = "inference.csv";
pub const SNAPSHOT: &str = "mem.snapshot";
pub const FOLDS_JSON: &str = "folds.json";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

/// `fold,ccr,failure` per fold, then `mean` and `std` rows over completed folds.
pub fn write_ccr(report: &EvalReport, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["fold", "ccr", "failure"])?;
    for f in &report.folds {
        w.write_record([f.fold.to_string(), opt(f.ccr), f.failure.as_ref().map(|x| x.message.clone()).unwrap_or_default()])?;
    }
    w.write_record(["mean".to_string(), report.ccr_mean.to_string(), String::new()])?;
    w.write_record(["std".to_string(), report.ccr_std.to_string(), String::new()])?;
    w.flush()?;
    Ok(())
}

/// Rows are true concepts, columns predicted ones; empty cells are absent.
pub fn write_matrix(m: &LabeledMatrix, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["true".to_string()];
    header.extend(m.labels.iter().cloned());
    w.write_record(&header)?;
    for (label, row) in m.labels.iter().zip(&m.cells) {
        let mut rec = vec![label.clone()];
        rec.extend(row.iter().map(|c| opt(*c)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_reward(folds: &[FoldReport], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["fold", "interaction", "raw", "smoothed"])?;
    for f in folds {
        for (i, (raw, s)) in f.signal.iter().zip(smoothed_signal(&f.signal, SIGNAL_WINDOW)).enumerate() {
            w.write_record([f.fold.to_string(), i.to_string(), raw.to_string(), s.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_embedding(folds: &[FoldReport], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["fold", "entry", "concept", "kind", "x", "y"])?;
    for f in folds {
        for e in &f.embedding {
            w.write_record([
                f.fold.to_string(),
                e.entry.to_string(),
                e.concept.clone(),
                e.kind.as_str().to_string(),
                e.x.to_string(),
                e.y.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `step,y,z`; step 0 is the start point.
pub fn write_regenerated(sample: &RegeneratedSample, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["step", "y", "z"])?;
    let points = std::iter::once(sample.start).chain(sample.points.iter().copied());
    for (i, (y, z)) in points.enumerate() {
        w.write_record([i.to_string(), y.to_string(), z.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// One JSON object per line.
pub fn write_episodes(episodes: &[EpisodeLog], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for e in episodes {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Demo ids per fold, as `[{"fold": 0, "train": ["Sine#0", ...], "test": [...]}, ...]`.
pub fn write_folds(folds: &[FoldSplit], path: &Path) -> Result<()> {
    let ids = |v: &[crate::dataset::DemoId]| v.iter().map(|d| d.to_string()).collect::<Vec<_>>();
    let value: Vec<serde_json::Value> = folds
        .iter()
        .map(|f| serde_json::json!({"fold": f.fold_index, "train": ids(&f.train), "test": ids(&f.test)}))
        .collect();
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn write_signal(log: &[i8], path: &Path) -> Result<()> {
    write_signal_csv(log, SIGNAL_WINDOW, fs::File::create(path)?)
}

/// `id,concept`
pub fn write_concept_names(names: &BTreeMap<ConceptId, String>, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["id", "concept"])?;
    for (id, name) in names {
        w.write_record([id.to_string(), name.clone()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_concept_names(path: &Path) -> Result<BTreeMap<ConceptId, String>> {
    if !path.is_file() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let mut names = BTreeMap::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let id = rec.get(0).and_then(|v| v.parse().ok()).ok_or_else(|| Error::Parse {
            file: path.to_path_buf(),
            line: line + 2,
            msg: "expected `id,concept`".into(),
        })?;
        names.insert(id, rec.get(1).unwrap_or_default().to_string());
    }
    Ok(names)
}

pub fn write_inference(records: &[InferenceRecord], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["demo", "true_concept", "predicted", "correct", "confidence", "nearest_entry"])?;
    for r in records {
        w.write_record([
            r.demo.clone(),
            r.true_concept.clone(),
            r.predicted.clone(),
            u8::from(r.correct()).to_string(),
            r.confidence.to_string(),
            r.nearest_entry.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_eval(report: &EvalReport, path: &Path) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(report)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_eval(path: &Path) -> Result<EvalReport> {
    if !path.is_file() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

/// Writes the whole bundle into `dir` and returns the files written.
/// Embedding and regenerated shapes come from the first completed fold.
pub fn write_bundle(report: &EvalReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut out = |name: &str| {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };
    write_ccr(report, &out(CCR_CSV))?;
    write_matrix(&report.confusion, &out(CONFUSION_CSV))?;
    write_matrix(&report.confidence, &out(CONFIDENCE_CSV))?;
    write_reward(&report.folds, &out(REWARD_CSV))?;
    write_embedding(&report.folds, &out(EMBEDDING_CSV))?;
    fs::write(out(REWARD_SVG), reward_svg(&report.folds))?;
    let first = report.completed_folds().next();
    let embedding = first.map(|f| f.embedding.as_slice()).unwrap_or_default();
    fs::write(out(EMBEDDING_SVG), embedding_svg(embedding))?;
    let regenerated = first.map(|f| f.regenerated.as_slice()).unwrap_or_default();
    fs::write(out(REGENERATED_SVG), regenerated_svg(regenerated))?;
    let regen_dir = dir.join(REGENERATED_DIR);
    fs::create_dir_all(&regen_dir)?;
    for s in regenerated {
        let p = regen_dir.join(format!("{}.csv", file_stem(&s.concept)));
        write_regenerated(s, &p)?;
        written.push(p);
    }
    Ok(written)
}

/// Concept names as file names: anything outside `[A-Za-z0-9_-]` becomes `_`.
pub fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

// ---- SVG ----

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: f64 = 48.0;

/// Evenly spaced hues.
fn color(i: usize, n: usize) -> String {
    let hue = 360.0 * i as f64 / n.max(1) as f64;
    format!("hsl({hue:.0},65%,42%)")
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn fit(points: impl Iterator<Item = (f64, f64)>) -> Frame {
        let mut x = (f64::INFINITY, f64::NEG_INFINITY);
        let mut y = x;
        for (a, b) in points.filter(|(a, b)| a.is_finite() && b.is_finite()) {
            x = (x.0.min(a), x.1.max(a));
            y = (y.0.min(b), y.1.max(b));
        }
        let pad = |r: (f64, f64)| {
            if !r.0.is_finite() {
                (0.0, 1.0)
            } else if r.1 - r.0 < 1e-12 {
                (r.0 - 0.5, r.1 + 0.5)
            } else {
                let p = 0.05 * (r.1 - r.0);
                (r.0 - p, r.1 + p)
            }
        };
        Frame { x: pad(x), y: pad(y) }
    }

    /// Same scale on both axes, for shapes.
    fn square(self) -> Frame {
        let (w, h) = (self.x.1 - self.x.0, self.y.1 - self.y.0);
        let s = w.max(h);
        let (cx, cy) = ((self.x.0 + self.x.1) / 2.0, (self.y.0 + self.y.1) / 2.0);
        Frame {
            x: (cx - s / 2.0, cx + s / 2.0),
            y: (cy - s / 2.0, cy + s / 2.0),
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (H - 2.0 * MARGIN)
    }
}

fn svg_open(title: &str, xlabel: &str, ylabel: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        s,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="#888"/>"##,
        W - 2.0 * MARGIN,
        H - 2.0 * MARGIN
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, escape(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(ylabel)
    );
    s
}

fn axis_ticks(s: &mut String, f: &Frame) {
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let xv = f.x.0 + t * (f.x.1 - f.x.0);
        let yv = f.y.0 + t * (f.y.1 - f.y.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle" font-size="10">{}</text>"#, f.px(xv), H - MARGIN + 14.0, tick(xv));
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end" font-size="10">{}</text>"#, MARGIN - 4.0, f.py(yv) + 3.0, tick(yv));
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn polyline(s: &mut String, f: &Frame, pts: &[(f64, f64)], stroke: &str) {
    let coords: Vec<String> = pts
        .iter()
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .map(|(x, y)| format!("{:.2},{:.2}", f.px(*x), f.py(*y)))
        .collect();
    let _ = writeln!(s, r#"<polyline fill="none" stroke="{stroke}" stroke-width="1.5" points="{}"/>"#, coords.join(" "));
}

fn legend(s: &mut String, names: &[String]) {
    for (i, name) in names.iter().enumerate() {
        let y = MARGIN + 10.0 + 13.0 * i as f64;
        let _ = writeln!(s, r#"<rect x="{}" y="{}" width="8" height="8" fill="{}"/>"#, W - MARGIN + 4.0, y - 7.0, color(i, names.len()));
        let _ = writeln!(s, r#"<text x="{}" y="{y}" font-size="9">{}</text>"#, W - MARGIN + 14.0, escape(name));
    }
}

/// Smoothed reward per fold against interaction count.
pub fn reward_svg(folds: &[FoldReport]) -> String {
    let series: Vec<Vec<(f64, f64)>> = folds
        .iter()
        .map(|f| {
            smoothed_signal(&f.signal, SIGNAL_WINDOW)
                .into_iter()
                .enumerate()
                .map(|(i, v)| (i as f64, v))
                .collect()
        })
        .collect();
    let mut frame = Frame::fit(series.iter().flatten().copied());
    frame.y = (-1.05, 1.05);
    let mut s = svg_open("Smoothed reinforcement signal", "interaction", "reward (window 7)");
    axis_ticks(&mut s, &frame);
    let zero = frame.py(0.0);
    let _ = writeln!(s, r##"<line x1="{MARGIN}" y1="{zero:.2}" x2="{}" y2="{zero:.2}" stroke="#ccc"/>"##, W - MARGIN);
    for (i, pts) in series.iter().enumerate() {
        polyline(&mut s, &frame, pts, &color(i, series.len()));
    }
    let names: Vec<String> = folds.iter().map(|f| format!("fold {}", f.fold)).collect();
    legend(&mut s, &names);
    s.push_str("</svg>\n");
    s
}

/// Embedded PB points, one color per concept; prototypes are drawn as squares.
pub fn embedding_svg(points: &[crate::evaluation::EmbeddedEntry]) -> String {
    let mut names: Vec<String> = points.iter().map(|p| p.concept.clone()).collect();
    names.sort();
    names.dedup();
    let frame = Frame::fit(points.iter().map(|p| (p.x, p.y)));
    let mut s = svg_open("PB space (classical MDS)", "dimension 1", "dimension 2");
    axis_ticks(&mut s, &frame);
    for p in points {
        let c = color(names.binary_search(&p.concept).unwrap_or(0), names.len());
        let (x, y) = (frame.px(p.x), frame.py(p.y));
        if !(x.is_finite() && y.is_finite()) {
            continue;
        }
        match p.kind {
            crate::memory::EntryKind::Prototype => {
                let _ = writeln!(s, r#"<rect x="{:.2}" y="{:.2}" width="8" height="8" fill="{c}"/>"#, x - 4.0, y - 4.0);
            }
            crate::memory::EntryKind::Exemplar => {
                let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="4" fill="{c}"/>"#);
            }
        }
    }
    legend(&mut s, &names);
    s.push_str("</svg>\n");
    s
}

/// One small panel per concept with the regenerated path and a dot at its start.
pub fn regenerated_svg(samples: &[RegeneratedSample]) -> String {
    let cols = (samples.len() as f64).sqrt().ceil().max(1.0) as usize;
    let rows = samples.len().div_ceil(cols).max(1);
    let cell = 150.0;
    let (w, h) = (cols as f64 * cell, rows as f64 * cell + 24.0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="16" text-anchor="middle" font-size="14">Regenerated samples</text>"#, w / 2.0);
    for (i, sample) in samples.iter().enumerate() {
        let (ox, oy) = ((i % cols) as f64 * cell, (i / cols) as f64 * cell + 24.0);
        let pts: Vec<(f64, f64)> = std::iter::once(sample.start).chain(sample.points.iter().copied()).collect();
        let f = Frame::fit(pts.iter().copied()).square();
        let map = |(y, z): (f64, f64)| {
            (
                ox + 10.0 + (y - f.x.0) / (f.x.1 - f.x.0) * (cell - 20.0),
                oy + cell - 22.0 - (z - f.y.0) / (f.y.1 - f.y.0) * (cell - 34.0),
            )
        };
        let _ = writeln!(s, r##"<rect x="{ox}" y="{oy}" width="{cell}" height="{cell}" fill="none" stroke="#ddd"/>"##);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, ox + cell / 2.0, oy + cell - 6.0, escape(&sample.concept));
        let coords: Vec<String> = pts
            .iter()
            .filter(|(a, b)| a.is_finite() && b.is_finite())
            .map(|p| {
                let (x, y) = map(*p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#, color(i, samples.len()), coords.join(" "));
        let (sx, sy) = map(sample.start);
        if sx.is_finite() && sy.is_finite() {
            let _ = writeln!(s, r#"<circle cx="{sx:.2}" cy="{sy:.2}" r="3.5" fill="black"/>"#);
        }
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{aggregate, EmbeddedEntry, InferenceRecord};
    use crate::memory::EntryKind;

    fn fold(k: usize, records: Vec<InferenceRecord>) -> FoldReport {
        FoldReport {
            fold: k,
            train_order: vec![],
            episodes: vec![],
            signal: vec![-1, 1, 1],
            ccr: crate::evaluation::ccr(&records),
            records,
            failure: None,
            concept_names: Default::default(),
            embedding: vec![EmbeddedEntry {
                entry: 0,
                concept: "A".into(),
                kind: EntryKind::Exemplar,
                x: 0.0,
                y: 1.0,
            }],
            regenerated: vec![RegeneratedSample {
                concept: "A/b".into(),
                entry: 0,
                start: (0.1, 0.2),
                points: vec![(0.2, 0.3), (0.3, 0.3)],
            }],
        }
    }

    fn rec(t: &str, p: &str) -> InferenceRecord {
        InferenceRecord {
            demo: format!("{t}#1"),
            true_concept: t.into(),
            predicted: p.into(),
            predicted_id: 0,
            confidence: 1.5,
            nearest_entry: 0,
        }
    }

    #[test]
    fn bundle_files() {
        let report = aggregate(vec!["A".into(), "B".into()], vec![fold(0, vec![rec("A", "A"), rec("A", "B")])]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let written = write_bundle(&report, dir.path()).unwrap();
        for name in [CCR_CSV, CONFUSION_CSV, CONFIDENCE_CSV, REWARD_CSV, EMBEDDING_CSV, REWARD_SVG, EMBEDDING_SVG, REGENERATED_SVG] {
            assert!(written.contains(&dir.path().join(name)), "{name}");
        }
        let confusion = fs::read_to_string(dir.path().join(CONFUSION_CSV)).unwrap();
        assert_eq!(confusion, "true,A,B\nA,50,50\nB,,\n");
        let regen = fs::read_to_string(dir.path().join(REGENERATED_DIR).join("A_b.csv")).unwrap();
        assert_eq!(regen, "step,y,z\n0,0.1,0.2\n1,0.2,0.3\n2,0.3,0.3\n");
        let reward = fs::read_to_string(dir.path().join(REWARD_CSV)).unwrap();
        assert_eq!(reward.lines().count(), 4);
        let svg = fs::read_to_string(dir.path().join(REWARD_SVG)).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        save_eval(&report, &dir.path().join(EVAL_JSON)).unwrap();
        assert_eq!(load_eval(&dir.path().join(EVAL_JSON)).unwrap(), report);
    }

    #[test]
    fn concept_names_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(CONCEPT_NAMES_CSV);
        let names: BTreeMap<ConceptId, String> = [(0, "Sine".to_string()), (3, "Leaf".to_string())].into();
        write_concept_names(&names, &p).unwrap();
        assert_eq!(read_concept_names(&p).unwrap(), names);
        assert!(matches!(read_concept_names(&dir.path().join("nope.csv")), Err(Error::MissingInput(_))));
    }

    #[test]
    fn svgs_survive_empty_input() {
        assert!(reward_svg(&[]).contains("</svg>"));
        assert!(embedding_svg(&[]).contains("</svg>"));
        assert!(regenerated_svg(&[]).contains("</svg>"));
    }
}
