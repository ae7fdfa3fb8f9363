//! Data formats and the synthetic toy-task generator: binary feature
//! files, JSON-lines manifests, manifest subsetting, and the result
//! curve CSV export.

mod curve;
mod features;
mod manifest;
mod toy;

pub use curve::{export_curve, read_summaries, RunSummary, CURVE_HEADER};
pub use features::{read_feature_dims, read_feature_file, write_feature_file, FEATURE_MAGIC};
pub use manifest::{load_manifest, subset_manifest, write_manifest, ManifestEntry};
pub use toy::{gen_toy_corpus, ToyCorpusPaths, ToyTaskSpec};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{path}: bad magic at byte offset {offset}")]
    BadMagic { path: String, offset: usize },
    #[error("{path}: unsupported feature format version {version}")]
    BadVersion { path: String, version: u32 },
    #[error("{path}: truncated payload: expected {expected} bytes, found {actual}")]
    Truncated {
        path: String,
        expected: usize,
        actual: usize,
    },
    #[error("{path}: invalid dimensions L={l}, D={d}")]
    BadDims { path: String, l: u32, d: u32 },
    #[error("manifest {path} line {line}: {reason}")]
    BadManifestLine {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("manifest {path}: duplicate id {id}")]
    DuplicateId { path: String, id: String },
    #[error("manifest {path}: feature file for {id} not found at {feat}")]
    MissingFeature {
        path: String,
        id: String,
        feat: String,
    },
    #[error("subset fraction must lie in (0, 1], got {0}")]
    BadFraction(f64),
    #[error("output directory {0} already exists and is not empty (pass force to overwrite)")]
    OutputDirExists(String),
    #[error("run summary {path}: {reason}")]
    BadSummary { path: String, reason: String },
}
