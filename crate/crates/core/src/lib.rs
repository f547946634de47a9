//! Variance-function estimation for paired replicate log-intensities, with
//! exact and conservative inference for abundance differences built on the
//! fitted variance function.
//!
//! The pieces, bottom up:
//!
//! * [`model`]: the variance forms `h(theta, mu)`, paired data and pair statistics.
//! * [`macl`]: the plug-in (MACL) estimating-equation fit.
//! * [`mixture_em`]: the consistent mixture-model fit by EM on an adaptive grid.
//! * [`intervals`]: confidence sets for a mean and for a difference of means.
//! * [`hypothesis`]: naive, conservative and Berger-Boos p-values.
//! * [`simulate`]: seeded Monte Carlo studies of bias, coverage and power.

pub mod dist;
pub mod error;
pub mod hypothesis;
pub mod intervals;
pub mod io;
pub mod macl;
pub mod mixture_em;
pub mod model;
pub mod simulate;
mod solver;

pub use error::{Error, Result};
pub use hypothesis::{
    pvalue_berger_boos, pvalue_conservative, pvalue_naive, CBetaPivot, TestMethod, TestResult,
};
pub use intervals::{
    ci_diff_bonferroni, ci_diff_naive, ci_diff_region, ci_mu_exact, ci_mu_naive, ConfidenceSet,
    DifferencePivot, Interval,
};
pub use macl::{macl_fit, mle_homoscedastic, FitResult, MaclOptions};
pub use mixture_em::{
    build_support, em_fit, fit_mixture, mixture_log_lik, responsibilities, EmOptions,
    MixtureEstimate, MixtureFitOptions, ResponsibilityMatrix, SupportGrid,
};
pub use model::{
    estimating_equation_bias, pair_stats, variance_at, Bounds, PairStats, PairedDataset,
    PairedObservation, VarianceForm, VarianceModel,
};
