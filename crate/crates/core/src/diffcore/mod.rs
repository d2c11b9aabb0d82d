//! Numeric substrate: seeded randomness, dense matrices, a small
//! feedforward network with a hand-written backward pass, Adam, and the
//! Gaussian pieces used by the variational encoder.

mod adam;
mod gaussian;
mod gradcheck;
mod matrix;
mod mlp;
mod rng;

pub use adam::{adam_step, AdamState, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPS};
pub use gaussian::{
    clamp_sigma, gaussian_kl, gaussian_kl_grad, reparam_sample, reparam_sample_with_noise, sigma_from_logvar,
    SIGMA_MAX, SIGMA_MIN,
};
pub use gradcheck::{grad_check, grad_check_with};
pub use matrix::Matrix;
pub use mlp::{
    backprop, backprop_tape, forward_with_tape, mlp_forward, sigmoid, softmax_in_place, softplus, Activation, Layer,
    MlpGrads, MlpParams, Tape, DEFAULT_HIDDEN,
};
pub use rng::RngStream;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-finite gradient in layer {layer}")]
    NonFinite { layer: usize },
}
