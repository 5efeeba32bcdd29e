//! Drift detection conditional on context.
//!
//! Tests whether deployment data differs from reference data *conditional on*
//! a context variable that is allowed to change between the two. The main
//! detector averages a conditional MMD estimate over held-out deployment
//! contexts and calibrates it with a propensity-score conditional permutation
//! test. Classical MMD and a density-ratio subsampling baseline are included,
//! along with synthetic scenario generators and calibration/power metrics.
//!
//! ```no_run
//! use ctxdrift::{conditional_permutation_test, DetectorConfig, SampleBatch};
//! # fn load() -> SampleBatch { unimplemented!() }
//! let batch = load();
//! let report = conditional_permutation_test(&batch, &DetectorConfig::default()).unwrap();
//! println!("p = {}", report.p_value);
//! ```

pub mod aditt;
pub mod baselines;
pub mod cme;
pub mod context;
pub mod error;
pub mod eval;
pub mod io;
pub mod kernel;
pub(crate) mod linalg;
pub mod permutation;
pub mod propensity;
pub mod rng;

pub use faer;

pub use aditt::{
    adite_statistic, aditt_statistic, split_holdout, split_pooled_holdout, weight_matrices,
    Domain, HoldoutSplit, KernelPool, SampleBatch, WeightMatrices,
};
pub use baselines::{
    kde_density, kde_fit, mmd_squared_biased, mmd_sub_test, mmd_two_sample_test,
    rejection_subsample, KdeModel, MmdStatistic,
};
pub use cme::{cme_holdout_error, codite_mmd, fit_cme, tune_lambda_cv, CmeFit, CvConfig};
pub use context::{fit_gmm_em, gmm_posterior, ContextProvider, GmmConfig, GmmModel, PassThrough};
pub use error::{Error, Result};
pub use eval::{
    gen_subpopulation, gen_time_context, ks_to_uniform, pvalue_auc, run_experiment,
    ExperimentResult, Scenario, ScenarioConfig,
};
pub use kernel::{median_heuristic_bandwidth, pairwise_sq_distances, rbf_gram, GramMatrix, KernelSpec};
pub use permutation::{
    conditional_permutation_test, detect, p_value, unconditional_permutation_test,
    DetectionReport, DetectorConfig, Method, PooledStatistic,
};
pub use propensity::{conditional_reassign, fit_propensity, PropensityModel};
