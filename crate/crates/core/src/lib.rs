//! State-space stochastic mortality models.
//!
//! Lee-Carter type models are cast as state-space systems: exact Kalman
//! filtering and forward-filtering backward-sampling for the linear-Gaussian
//! kinds, closed-form score and information recursions for maximum
//! likelihood, a bootstrap particle filter with particle independent
//! Metropolis-Hastings for the stochastic-volatility kinds, posterior
//! predictive forecasts, abridged life tables and conditional DIC.
//!
//! Every numerical routine is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bayes;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod forecast;
pub mod gradient;
pub mod kalman;
pub mod lifetable;
pub mod linalg;
pub mod model;
pub mod scalar;
pub mod smc;

pub use data::{
    crude_rates, load_panel, load_panel_with, log_rates, read_panel, standard_groups, AgeGroup,
    ZeroPolicy,
};
pub use error::{Error, ErrorCategory, Result};
pub use linalg::Matrix;
pub use model::{
    default_constraints, lc_transform, simulate, simulate_with, CirGuard, ModelKind, ObsVariance,
};
pub use scalar::Scalar;

/// Panel of `f64` log death rates.
pub type Panel = data::MortalityPanel<f64>;
/// `f64` static parameters.
pub type Params = model::StaticParams<f64>;
/// `f64` identification constraints.
pub type Constraints = model::ConstraintSpec<f64>;
/// `f64` latent paths.
pub type Latent = model::LatentPaths<f64>;
