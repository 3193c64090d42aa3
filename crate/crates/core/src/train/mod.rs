//! Optimizer, training loop and cross-validation protocol.

mod adam;
mod cv;
mod fold;
mod schedule;

pub use adam::{adam_step, AdamState, ADAM_EPS, BETA1, BETA2};
pub use cv::{
    ablation_csv, cross_validate, cross_validate_with, derive_seed, mean_std, run_ablation, AblationRow, CvResult,
    FoldOutcome, OofRisk,
};
pub use fold::{
    accumulate_gradients, one_pass_gradient, prepare_examples, train_fold, EpochRecord, Example, FoldModel, LrEvent,
    TrainConfig, TrainReport,
};
pub use schedule::{Decision, PlateauSchedule, MIN_IMPROVEMENT};

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::data::DataError;
use crate::net::NetError;
use crate::survival::SurvivalError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Survival(#[from] SurvivalError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}
