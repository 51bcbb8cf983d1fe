//! Latent class growth analysis for bounded ordinal longitudinal outcomes.
//!
//! Each latent class follows a polynomial trajectory in time; scores are
//! modelled either as a doubly censored normal or through cumulative probit
//! categories, and class membership follows a multinomial logit in baseline
//! covariates. Fitting is multi-start EM or Marquardt-damped Newton, and
//! the number of classes is chosen by BIC.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the matrix formulas they implement.
#![allow(clippy::needless_range_loop)]

pub mod data;
mod engine;
pub mod error;
pub mod estimation;
pub mod likelihood;
pub mod model;
pub mod normal;
mod optim;
pub mod par;
pub mod selection;
pub mod simulate;
pub mod study;

pub use data::{CategoryMap, LongitudinalDataset, SubjectRecord};
pub use error::{LcgaError, Result};
pub use estimation::{
    direct_fit, em_fit, fit_one_class, generate_starts, multi_start_fit, Backend, Convergence, FitConfig, FitResult,
    FitStatus,
};
pub use likelihood::{
    class_membership_probs, cnorm_obs_loglik, mixture_loglik, mixture_loglik_grad, probit_category_probs,
    series_loglik_given_class,
};
pub use model::{Family, Measurement, ModelSpec, ParameterSet};
pub use selection::{
    aic, bayes_factor_2dbic, bic, class_search, correct_classification_rate, posterior_from_params, posterior_probs,
    PosteriorMatrix, SelectionReport, SelectionRule,
};
pub use simulate::{categorize, simulate_scenario1, simulate_scenario2, Scenario, ScenarioConfig};
