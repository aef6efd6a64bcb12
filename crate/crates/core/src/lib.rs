//! Mixed correlation matrices (Pearson, polyserial, polychoric) for data
//! with continuous and ordinal columns, estimated by iterative GMM.
//!
//! Ordinal variables are modelled as latent standard normals cut at
//! thresholds. Every coefficient is identified by a block of moment
//! conditions; the blocks are stacked into one system and solved with an
//! optimally weighted GMM loss, either jointly with the thresholds
//! ([`Method::OneStep`]) or after estimating thresholds from the marginal
//! proportions ([`Method::TwoStep`]).
//!
//! The numerical core is generic over the scalar type ([`Real`], implemented
//! for `f32` and `f64`); the aliases below fix it to `f64`.

// `!(x > y)` is used on purpose so that NaN takes the failure branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimator;
pub mod io;
pub mod model;
pub mod moments;
pub mod normal;
pub mod scalar;
pub mod simulation;

pub use error::{Error, Result};
pub use estimator::{
    compute_sigma, estimate_thresholds, fit, fit_one_step, fit_two_step, fit_with, minimize_loss,
    CovarianceVariant, Diagnostics, FitConfig, Method,
};
pub use model::{CoefficientKind, CoefficientLayout, VariableKind, VariableSpec};
pub use moments::{
    assemble_gradient, build_system, eval_moments, eval_u, weight_matrix, EquationSystem,
    SystemMode,
};
pub use normal::{CdfKernel, LegendreOrder};
pub use scalar::Real;
pub use simulation::{generate, ml_pair_oracle, run_study, SimDesign, SimReport};

pub type MixedDataset = model::MixedDataset<f64>;
pub type ThresholdSet = model::ThresholdSet<f64>;
pub type CorrelationParams = model::CorrelationParams<f64>;
pub type ParamVector = model::ParamVector<f64>;
pub type EstimationResult = estimator::EstimationResult<f64>;
