pub mod mcmc;
pub mod model;
pub mod posterior;
pub mod prior;
pub mod summary;

pub use mcmc::{initial_state, mcmc_fit, run_chain, McmcConfig, PosteriorChain};
pub use model::{
    identifiability_bound, prepare_fit, resolve_priors, Coord, FitData, Identifiability, ModelSpec, ParamMode,
    ResolvedPriors,
};
pub use posterior::{decompose, log_posterior, log_prior, plot_level_log_posterior, Decomposition, State};
pub use prior::{NormalPrior, PositivePrior, PriorSpec, RateChoice};
pub use summary::{
    abundance_table, pointwise_band, summarize, summarize_values, term_intensity_draws, AbundanceRow, Band,
    ParamSummary,
};
