//! Bayesian Bradley-Terry inference with a first-position intercept:
//! model, sampler, interval and rank summaries, and per-cell fitting.

mod fit;
mod hdi;
pub(crate) mod model;
mod nuts;
mod rank;
mod ties;

use thiserror::Error;

pub use fit::{
    fit_item_ability, AgentSummary, FitConfig, FitDiagnostics, InterceptSummary, ItemAbilityFit,
};
pub(crate) use fit::{sample_judgments, summarize_column};
pub use hdi::{hdi, Interval};
pub use model::{
    grad_log_posterior, log_posterior, AbilityDimension, BtParameterVector, BtPosterior, Choice,
    ComparisonJudgment, LogDensity, Outcome,
};
pub use nuts::{effective_sample_size, nuts_sample, PosteriorDraws, SamplerConfig, SamplerDiagnostics};
pub use rank::{rank_per_draw, RankSummary};
pub use ties::resolve_ties;

#[derive(Debug, Error)]
pub enum BtError {
    #[error("outcome references agent {0:?} with no strength parameter")]
    UnknownAgent(String),
    #[error("agent {0:?} compared with itself")]
    SelfComparison(String),
    #[error("no judgments to fit")]
    NoJudgments,
    #[error("judgment for {found} passed to the fit of {expected}")]
    MixedCell { expected: String, found: String },
    #[error("log density not finite at any of {attempts} initial points")]
    NonFiniteDensity { attempts: usize },
    #[error("need at least 2 samples for an interval, got {0}")]
    InsufficientSamples(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
