//! Discrete-time survival mathematics and evaluation statistics.

mod bins;
mod cindex;
mod hazard;
mod km;

pub use bins::{make_time_bins, TimeBins};
pub use cindex::concordance_index;
pub use hazard::{nll_loss, risk_score, survival_from_hazards, HazardPrediction, HAZARD_CLAMP};
pub use km::{kaplan_meier, logrank_test, stratify_by_median, KmCurve, LogrankResult};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurvivalError {
    #[error("hazard {0} outside [0, 1]")]
    OutOfRangeHazard(f64),
    #[error("time bin {bin} outside 1..={n_t}")]
    BadBin { bin: usize, n_t: usize },
    #[error("no comparable pairs")]
    NoComparablePairs,
    #[error("cannot place {n_t} time bins: {msg}")]
    DegenerateTimes { n_t: usize, msg: String },
    #[error("no events in either group")]
    NoEvents,
    #[error("input lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("empty input: {0}")]
    Empty(&'static str),
}
