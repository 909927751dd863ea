//! Posterior sampling: Gibbs with FFBS for the linear kinds and
//! PIMH-within-Gibbs for the stochastic-volatility kinds.

mod chain;
pub mod conditional;
mod prior;
mod sampler;

pub use chain::{flatten_params, param_columns, unflatten_params, ChainMeta, ChainOutput};
pub use conditional::{sample_static_linear, sample_static_sv, FullConditional};
pub use prior::{ConditionalForm, InvGammaPrior, NormalPrior, PriorSpec};
pub use sampler::{
    default_initial_params, extend_chain, gibbs_lcsv, gibbs_linear, obs_variance_for, pimh_accept,
    pimh_init, pimh_update, start_chain, sweep, sweep_rng, ChainState, GibbsConfig, PimhState, SweepDraw,
};
