//! Conditional updates of the static parameters given a factor path.

mod adaptive;
mod garch;
pub(crate) mod idio;
mod leverage;
mod loadings;
mod phi;

pub use adaptive::{metropolis_accept, mh_step, AdaptiveProposal, DEFAULT_JITTER, DEFAULT_WARMUP, INITIAL_PROPOSAL_SD};
pub use garch::{garch_series_loglik, log_prior_phi, mh_step_garch, GarchPrior};
pub use idio::{sample_idio_variance_constant, IgPrior};
pub use leverage::sample_leverage;
pub use loadings::{invariant_posterior, sample_loadings_invariant, sample_loadings_triangular, DEFAULT_C_LAMBDA, DEFAULT_PRIOR_VAR};
pub use phi::{garch_to_phi, phi_to_garch, PhiCoords};
