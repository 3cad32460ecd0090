//! Incremental learning of relational concepts from demonstrations with an
//! RNNPB memory, concept clustering and an oracle teacher.

pub mod clustering;
pub mod concept_engine;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod kinematics;
pub mod memory;
pub mod persist;
pub mod report;
pub mod rnnpb;
pub mod scalar;
pub mod teacher;
pub mod toy;

pub use error::{Error, Result};

/// Scalar used by the command-line tool and the stored artifacts.
pub type Real = f64;

pub type Mem = memory::Mem<Real>;
pub type NetWeights = rnnpb::NetWeights<Real>;
pub type ProcessedDemo = dataset::ProcessedDemo<Real>;
pub type Normalization = dataset::Normalization<Real>;

pub type Mem32 = memory::Mem<f32>;
pub type NetWeights32 = rnnpb::NetWeights<f32>;
