//! Hand-designed optimizers used as baselines and as building blocks for the
//! learned ones.

mod first_order;
mod pnp;
mod prox;
mod safeguard;

pub use first_order::{
    adam_step, adam_update, gd_line_search_step, gd_step, nag_line_search_step, rmsprop_step, rmsprop_update,
    AdamConfig, FirstOrderMethod, FirstOrderState, LineSearchConfig, LineSearchOutcome, RmsPropConfig,
};
pub use pnp::{
    pnp_admm_step, prox_least_squares, Denoiser, IdentityDenoiser, MedianFilterDenoiser, PnpState,
    SoftThresholdDenoiser,
};
pub use prox::{
    fista_solve, fista_step, ista_step, lasso_reference_optimum, next_fista_t, ProxState, REFERENCE_FISTA_ITERS,
};
pub use safeguard::{safeguarded_step, SafeguardOutcome};
