//! Transfer-learning latent factor model: hierarchical Bayesian k-factor
//! model with population-specific loadings, probit augmentation for binary
//! columns, Gibbs inference, posterior-predictive classification, and the
//! simulation/evaluation harness around it.

pub mod baselines;
pub mod cov;
pub mod data;
pub mod eval;
pub mod error;
pub mod geweke;
pub mod gibbs;
pub mod io;
pub mod linalg;
pub mod predict;
pub mod rng;
pub mod simulate;

pub use baselines::{
    fit_lasso, fit_plain_lfm, fit_tl_lfm, predict_lasso, solve_logistic_lasso, LassoConfig,
    LassoModel,
};
pub use cov::{assemble_marginal_covariance, MarginalCovariance};
pub use data::{
    validate_dataset, ColumnKind, ColumnMeta, Dataset, GammaPrior, Hyperparameters, Population,
    RawTable, Standardizer, ValidateMode,
};
pub use error::{Error, Result, Violation};
pub use eval::{
    auroc, cross_validate_k, export_factor_scatter, run_experiment, ExperimentConfig,
    ExperimentHooks, ExperimentOutput, ExperimentReport, FactorSource, Method, ScatterData,
    TestSet,
};
pub use gibbs::{
    run_chain, ChainConfig, ModelKind, ModelState, PosteriorSamples, RetainedState, RunHooks,
    Sampler,
};
pub use io::{load_model, read_dataset, save_model, write_dataset, ModelArtifact};
pub use predict::{predict, PredictOptions, PredictiveResult};
pub use simulate::{simulate, SimulationSpec, SplitRatio};
