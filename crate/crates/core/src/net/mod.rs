//! The dual-stream cross-attention network.

mod check;
mod config;
mod forward;
pub mod layers;
mod params;

pub use check::{gradcheck_network, tiny_bag, GradcheckReport, TensorCheck};
pub use config::{Activation, DscaConfig, Fusion, HighEmbed, Pool, Streams};
pub use forward::{
    bag_loss, forward_on_tape, loss_and_gradient, predict, predict_with_attention, AttentionMaps, BagGradient,
    ForwardOutput, PreparedBag,
};
pub use params::{count_parameters, param_specs, DscaParams, Init, ParamSpec, ParamVars, PARAMS_MAGIC, PARAMS_VERSION};

use std::path::PathBuf;

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::data::DataError;
use crate::survival::SurvivalError;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("embedding dim {0} must be even")]
    OddEmbedDim(usize),
    #[error("{0}")]
    BagMismatch(String),
    #[error("missing parameter tensor '{0}'")]
    MissingParam(String),
    #[error("parameter '{name}' has shape {found:?}, config expects {expected:?}")]
    ParamsShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("{}: {msg}", path.display())]
    BadParamsFile { path: PathBuf, msg: String },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Survival(#[from] SurvivalError),
}

#[cfg(test)]
mod tests;
