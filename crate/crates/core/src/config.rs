//! Run configuration: one TOML file holding every tunable of an experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::concept_engine::EngineParams;
use crate::dataset::{load_corpus, preprocess_corpus, ConceptLabelMap, Normalization, PreprocessConfig, ProcessedDemo};
use crate::error::{Error, Result};
use crate::persist;
use crate::rnnpb::NetConfig;
use crate::Real;

/// File name of the config copy written into every run directory.
pub const CONFIG_COPY: &str = "config.toml";

pub const CORPUS_FORMAT: &str = "iloci-corpus";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Directory holding one CSV per shape.
    pub corpus_dir: PathBuf,
    /// `shape,concept` CSV.
    pub label_map: PathBuf,
    /// Concepts to keep; empty keeps all of them.
    pub concepts: Vec<String>,
    /// Preprocessed corpus written by `preprocess` and read by the other commands.
    pub cache: PathBuf,
    /// Master seed. Drives folds, presentation order and weight init.
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Run the cross-validation folds on the rayon pool.
    pub parallel_folds: bool,
    pub preprocess: PreprocessConfig,
    pub net: NetConfig,
    pub engine: EngineParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        let seed = 7;
        RunConfig {
            corpus_dir: PathBuf::from("data/lasa"),
            label_map: PathBuf::from("data/lasa/concepts.csv"),
            concepts: Vec::new(),
            cache: PathBuf::from("runs/corpus.cache"),
            seed,
            out_dir: PathBuf::from("runs/default"),
            parallel_folds: true,
            preprocess: PreprocessConfig::default(),
            net: NetConfig {
                rng_seed: seed,
                ..Default::default()
            },
            engine: EngineParams::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.sync_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::Config(format!("config file {} not found", path.display())));
        }
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("RunConfig serializes to TOML")
    }

    /// Writes the effective config into `dir`.
    pub fn write_copy(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(CONFIG_COPY);
        std::fs::write(&path, self.to_toml())?;
        Ok(path)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.sync_seed();
    }

    fn sync_seed(&mut self) {
        self.net.rng_seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        self.net.validate()?;
        self.engine.validate()
    }

    /// Label map restricted to the configured concepts. A missing map is a
    /// configuration error, not a data error.
    pub fn labels(&self) -> Result<ConceptLabelMap> {
        if !self.label_map.is_file() {
            return Err(Error::Config(format!("label map {} not found", self.label_map.display())));
        }
        let labels = ConceptLabelMap::load(&self.label_map)?;
        if self.concepts.is_empty() {
            return Ok(labels);
        }
        let known = labels.concepts();
        if let Some(missing) = self.concepts.iter().find(|c| !known.contains(c)) {
            return Err(Error::Config(format!("concept {missing} is not in {}", self.label_map.display())));
        }
        let keep: Vec<&str> = self.concepts.iter().map(String::as_str).collect();
        Ok(labels.restrict_to_concepts(&keep))
    }

    /// Loads and preprocesses the configured corpus.
    pub fn prepare(&self) -> Result<PreparedCorpus> {
        let labels = self.labels()?;
        let corpus = load_corpus(&self.corpus_dir, &labels)?;
        let (demos, normalization) = preprocess_corpus::<Real>(&corpus, &labels, &self.preprocess)?;
        Ok(PreparedCorpus {
            source: self.corpus_key(),
            demos,
            normalization,
        })
    }

    fn corpus_key(&self) -> CorpusKey {
        CorpusKey {
            corpus_dir: self.corpus_dir.clone(),
            label_map: self.label_map.clone(),
            concepts: self.concepts.clone(),
            preprocess: self.preprocess.clone(),
        }
    }
}

/// The settings a preprocessed corpus depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusKey {
    pub corpus_dir: PathBuf,
    pub label_map: PathBuf,
    pub concepts: Vec<String>,
    pub preprocess: PreprocessConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedCorpus {
    pub source: CorpusKey,
    pub demos: Vec<ProcessedDemo<Real>>,
    pub normalization: Normalization<Real>,
}

impl PreparedCorpus {
    /// Returns the checksum of the written payload.
    pub fn save(&self, path: &Path) -> Result<String> {
        persist::save(path, CORPUS_FORMAT, self)
    }

    /// Loads the cache written for `cfg`; a cache built from other settings
    /// is a configuration error.
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let prepared: PreparedCorpus = persist::load(&cfg.cache, CORPUS_FORMAT)?;
        if prepared.source != cfg.corpus_key() {
            return Err(Error::Config(format!(
                "{} was built with different corpus settings; rerun preprocess",
                cfg.cache.display()
            )));
        }
        Ok(prepared)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.concepts = vec!["Sine".into(), "CShape".into()];
        cfg.net.max_epochs = 17;
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_takes_defaults() {
        let cfg = RunConfig::from_toml("seed = 3\n[net]\nmax_epochs = 10\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.net.rng_seed, 3);
        assert_eq!(cfg.net.max_epochs, 10);
        assert_eq!(cfg.engine, EngineParams::default());
    }

    #[test]
    fn bad_values_are_config_errors() {
        assert!(matches!(RunConfig::from_toml("seed = \"x\""), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("nonsense = 1"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("[net]\nteacher_forcing = 2.0"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("[net]\nmax_step = 0.0"), Err(Error::Config(_))));
        assert_eq!(RunConfig::from_toml("[net]\nmax_step = 0.1").unwrap().net.max_step, Some(0.1));
    }

    #[test]
    fn missing_label_map() {
        let cfg = RunConfig {
            label_map: PathBuf::from("/nonexistent/concepts.csv"),
            ..Default::default()
        };
        assert!(matches!(cfg.labels(), Err(Error::Config(_))));
    }

    #[test]
    fn missing_file() {
        assert!(matches!(RunConfig::load(Path::new("/nonexistent.toml")), Err(Error::Config(_))));
    }
}
