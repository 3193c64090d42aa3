//! Bag data model: the on-disk bag format, spatial alignment checks,
//! coordinate discretization, synthetic cohorts and patient-level splits.

mod bag;
mod cohort;
mod coords;
mod split;
mod synth;

pub use bag::{canonical_order, load_bag, save_bag, Coord, PatientBag, BAG_MAGIC, BAG_VERSION};
pub use cohort::Cohort;
pub use coords::{discretize_coordinates, GridPos};
pub use split::{split_folds, train_val_split, CohortSplit};
pub use synth::{generate_synthetic_cohort, signal_direction, synthetic_risks, SignalSite, SynthConfig};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: bad magic, expected \"DSB1\"")]
    BadMagic { path: PathBuf },
    #[error("{path}: unsupported bag version {version}")]
    UnsupportedVersion { path: PathBuf, version: u32 },
    #[error("{path}: truncated file (needed {needed} bytes, found {found})")]
    TruncatedFile { path: PathBuf, needed: usize, found: usize },
    #[error("alignment violation: {high_rows} high-resolution rows, expected lambda^2 * m = {expected}")]
    AlignmentViolation { high_rows: usize, expected: usize },
    #[error("non-finite token value in {0}")]
    NonFiniteToken(&'static str),
    #[error("duplicate coordinate (wsi {wsi}, x {x}, y {y})")]
    DuplicateCoordinate { wsi: u32, x: u32, y: u32 },
    #[error("invalid bag: {0}")]
    InvalidBag(String),
    #[error("need at least {needed} patients, cohort has {found}")]
    TooFewPatients { needed: usize, found: usize },
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("manifest {path}: {msg}")]
    Manifest { path: PathBuf, msg: String },
    #[error("missing bag file {0}")]
    MissingBag(PathBuf),
    #[error("duplicate patient id {0}")]
    DuplicatePatient(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::Io { path: path.into(), source }
    }
}
