//! Permutation tests: the propensity-based conditional test for the
//! context-conditional statistics and the plain label-shuffling test for MMD.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aditt::{rows_of, split_rows, Domain, KernelPool, SampleBatch};
use crate::cme::{tune_lambda_cv, CvConfig};
use crate::error::{config, Result};
use crate::kernel::KernelSpec;
use crate::linalg::gather_rows;
use crate::propensity::{fit_propensity_with_gram, reassign_from_probabilities};
use crate::rng::substream;

/// Detector selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Context-conditional statistic with the conditional permutation test.
    Aditt,
    /// Ablation averaging over pooled contexts of both domains.
    Adite,
    /// Plain biased MMD with a label-shuffling permutation test.
    Mmd,
    /// MMD after density-ratio rejection subsampling of the reference set.
    MmdSub,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Aditt => "aditt",
            Method::Adite => "adite",
            Method::Mmd => "mmd",
            Method::MmdSub => "mmd-sub",
        }
    }

    pub fn needs_context(self) -> bool {
        matches!(self, Method::Aditt | Method::Adite)
    }
}

impl std::str::FromStr for Method {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "aditt" | "mmd-aditt" => Ok(Method::Aditt),
            "adite" | "mmd-adite" => Ok(Method::Adite),
            "mmd" => Ok(Method::Mmd),
            "mmd-sub" | "mmdsub" => Ok(Method::MmdSub),
            other => Err(config(format!("unknown method '{other}'"))),
        }
    }
}

/// Detector settings. Bandwidths left unset use the median heuristic over
/// the pooled sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub method: Method,
    pub n_perm: usize,
    pub holdout_fraction: f64,
    pub lambda0: f64,
    pub lambda1: f64,
    /// Cross-validate both regularisers instead of using `lambda0`/`lambda1`.
    pub tune_lambda: Option<CvConfig>,
    pub propensity_reg: f64,
    /// Report `(1 + #{t_i >= t}) / (1 + n_perm)` instead of `#{t_i > t} / n_perm`.
    pub smoothed_p_value: bool,
    pub seed: u64,
    pub k_bandwidth: Option<f64>,
    pub l_bandwidth: Option<f64>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            method: Method::Aditt,
            n_perm: 100,
            holdout_fraction: 0.25,
            lambda0: 1e-3,
            lambda1: 1e-3,
            tune_lambda: None,
            propensity_reg: 1e-5,
            smoothed_p_value: false,
            seed: 0,
            k_bandwidth: None,
            l_bandwidth: None,
        }
    }
}

impl DetectorConfig {
    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_perm == 0 {
            return Err(config("n_perm must be at least 1"));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(config(format!("holdout fraction must lie in (0, 1), got {}", self.holdout_fraction)));
        }
        for (name, v) in [("lambda0", self.lambda0), ("lambda1", self.lambda1), ("propensity_reg", self.propensity_reg)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(config(format!("{name} must be positive, got {v}")));
            }
        }
        for bw in [self.k_bandwidth, self.l_bandwidth].into_iter().flatten() {
            KernelSpec::new(bw)?;
        }
        Ok(())
    }
}

/// Outcome of one detection run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub method: Method,
    pub statistic: f64,
    pub p_value: f64,
    pub n_perm: usize,
    pub seed: u64,
    pub permuted_statistics: Vec<f64>,
    /// Bandwidths, regularisers, holdout size, redraw counts.
    pub diagnostics: BTreeMap<String, f64>,
    /// Effective settings of the run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<DetectorConfig>,
}

impl DetectionReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn drift_detected(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// `#{t_i > t} / n` or, smoothed, `(1 + #{t_i >= t}) / (1 + n)`.
pub fn p_value(statistic: f64, permuted: &[f64], smoothed: bool) -> f64 {
    let n = permuted.len() as f64;
    if smoothed {
        let ge = permuted.iter().filter(|&&t| t >= statistic).count() as f64;
        (1.0 + ge) / (1.0 + n)
    } else {
        permuted.iter().filter(|&&t| t > statistic).count() as f64 / n
    }
}

fn bandwidth(fixed: Option<f64>, points: faer::MatRef<'_, f64>) -> Result<KernelSpec> {
    match fixed {
        Some(bw) => KernelSpec::new(bw),
        None => KernelSpec::median_heuristic(points),
    }
}

/// Stream reserved for cross-validating the regulariser of `domain`.
const CV_STREAM: u64 = u64::MAX - 8;

/// Conditional permutation test for [`Method::Aditt`] or [`Method::Adite`].
///
/// The statistic uses the holdout split drawn from substream `(seed, 0)`.
/// Permutation `i` draws reassigned labels and a fresh split from substream
/// `(seed, i + 1)`, so the report does not depend on thread scheduling.
pub fn conditional_permutation_test(batch: &SampleBatch, cfg: &DetectorConfig) -> Result<DetectionReport> {
    cfg.validate()?;
    if !cfg.method.needs_context() {
        return Err(config(format!("{} is not a conditional-test statistic", cfg.method.name())));
    }
    batch.require_context()?;
    let k_spec = bandwidth(cfg.k_bandwidth, batch.statistics())?;
    let l_spec = bandwidth(cfg.l_bandwidth, batch.contexts())?;
    let pool = KernelPool::new(batch, k_spec, l_spec)?;

    let (lambda0, lambda1) = match &cfg.tune_lambda {
        None => (cfg.lambda0, cfg.lambda1),
        Some(cv) => {
            let tune = |d: Domain| {
                let rows = batch.indices_of(d);
                tune_lambda_cv(
                    gather_rows(batch.statistics(), &rows).as_ref(),
                    gather_rows(batch.contexts(), &rows).as_ref(),
                    cv,
                    k_spec,
                    l_spec,
                    &mut substream(cfg.seed, CV_STREAM + d.bit() as u64),
                )
            };
            (tune(Domain::Reference)?, tune(Domain::Deployment)?)
        }
    };

    let adite = cfg.method == Method::Adite;
    let evaluate = |domains: &[Domain], rng: &mut crate::rng::Stream| -> Result<(f64, usize)> {
        let rows: Vec<usize> = if adite { (0..domains.len()).collect() } else { rows_of(domains, Domain::Deployment) };
        let split = split_rows(&rows, cfg.holdout_fraction, rng)?;
        let eval = if adite {
            pool.evaluate_adite(domains, &split, lambda0, lambda1)?
        } else {
            pool.evaluate_aditt(domains, &split, lambda0, lambda1)?
        };
        Ok((eval.statistic(), split.holdout().len()))
    };

    let (statistic, holdout_size) = evaluate(batch.domains(), &mut substream(cfg.seed, 0))?;

    let model = fit_propensity_with_gram(batch.contexts(), pool.context_gram(), batch.domains(), cfg.propensity_reg, l_spec)?;
    let probs = model.predict_from_cross_gram(pool.context_gram());

    let permuted: Vec<(f64, usize)> = (0..cfg.n_perm)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(cfg.seed, i as u64 + 1);
            let (z, redraws) = reassign_from_probabilities(&probs, &mut rng)?;
            Ok((evaluate(&z, &mut rng)?.0, redraws))
        })
        .collect::<Result<_>>()?;
    let permuted_statistics: Vec<f64> = permuted.iter().map(|p| p.0).collect();
    let redraws: usize = permuted.iter().map(|p| p.1).sum();

    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("k_bandwidth".into(), k_spec.bandwidth());
    diagnostics.insert("l_bandwidth".into(), l_spec.bandwidth());
    diagnostics.insert("lambda0".into(), lambda0);
    diagnostics.insert("lambda1".into(), lambda1);
    diagnostics.insert("holdout_size".into(), holdout_size as f64);
    diagnostics.insert("degenerate_redraws".into(), redraws as f64);
    diagnostics.insert("propensity_converged".into(), model.converged() as u8 as f64);
    diagnostics.insert("propensity_iterations".into(), model.iterations() as f64);

    Ok(DetectionReport {
        method: cfg.method,
        statistic,
        p_value: p_value(statistic, &permuted_statistics, cfg.smoothed_p_value),
        n_perm: cfg.n_perm,
        seed: cfg.seed,
        permuted_statistics,
        diagnostics,
        config: Some(DetectorConfig { lambda0, lambda1, ..cfg.clone() }),
    })
}

/// Two-sample statistic evaluated on a partition of a fixed pooled sample.
pub trait PooledStatistic: Sync {
    /// Number of pooled rows.
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn evaluate(&self, group0: &[usize], group1: &[usize]) -> Result<f64>;
}

/// Label-shuffling permutation test. Rows `0..n0` of the pool form group 0
/// and the remaining rows group 1; permutation `i` reshuffles with substream
/// `(seed, i + 1)`.
///
/// The report's method tag is [`Method::Mmd`]; callers relabel as needed.
pub fn unconditional_permutation_test<S: PooledStatistic + ?Sized>(
    statistic: &S,
    n0: usize,
    n_perm: usize,
    seed: u64,
    smoothed: bool,
) -> Result<DetectionReport> {
    let n = statistic.len();
    if n0 < 2 || n < n0 + 2 {
        return Err(config(format!("each group needs at least 2 rows (n0 = {n0}, n1 = {})", n.saturating_sub(n0))));
    }
    if n_perm == 0 {
        return Err(config("n_perm must be at least 1"));
    }
    let all: Vec<usize> = (0..n).collect();
    let observed = statistic.evaluate(&all[..n0], &all[n0..])?;
    let permuted_statistics: Vec<f64> = (0..n_perm)
        .into_par_iter()
        .map(|i| {
            let mut order = all.clone();
            order.shuffle(&mut substream(seed, i as u64 + 1));
            statistic.evaluate(&order[..n0], &order[n0..])
        })
        .collect::<Result<_>>()?;
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("n0".into(), n0 as f64);
    diagnostics.insert("n1".into(), (n - n0) as f64);
    Ok(DetectionReport {
        method: Method::Mmd,
        statistic: observed,
        p_value: p_value(observed, &permuted_statistics, smoothed),
        n_perm,
        seed,
        permuted_statistics,
        diagnostics,
        config: None,
    })
}

/// Run the detector selected by `cfg.method`.
pub fn detect(batch: &SampleBatch, cfg: &DetectorConfig) -> Result<DetectionReport> {
    match cfg.method {
        Method::Aditt | Method::Adite => conditional_permutation_test(batch, cfg),
        Method::Mmd => crate::baselines::mmd_batch_test(batch, cfg),
        Method::MmdSub => crate::baselines::mmd_sub_test(batch, cfg),
    }
}
