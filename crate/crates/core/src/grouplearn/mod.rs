//! Latent group discovery: a variational encoder whose membership decoder
//! learns a low-coverage fuzzy group under a minimum-mass constraint, group
//! sampling, and union prediction sets.

mod loss;
mod model;
mod predict;
mod projection;
mod train;

pub use loss::{
    coverage_loss, coverage_loss_grad, fareg_loss, fareg_loss_with_noise, standard_noise, GroupGrads,
    LossBreakdown, LossWeights,
};
pub use model::{GroupModel, DEFAULT_LATENT_DIM};
pub use predict::{
    attribute_features, fareg_predict, fareg_predict_with_groups, sample_from_probs, sample_groups, Attribution,
    FaregPrediction, GroupSample, GroupThreshold, MIN_GROUP_SIZE,
};
pub use projection::project_min_mass;
pub use train::{
    bias_shift_for_mean, train_group_model, train_group_model_with, EpochRecord, TrainConfig, TrainedGroupModel,
    VALIDATION_MASS_SLACK,
};

use thiserror::Error;

use crate::conformal::ConformalError;
use crate::diffcore::DiffError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GroupError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Conformal(#[from] ConformalError),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("infeasible constraint: {0}")]
    Infeasible(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("model format error: {0}")]
    Format(String),
}
