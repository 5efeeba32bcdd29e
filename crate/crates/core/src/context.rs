//! Context providers: columns passed through from the input, or membership
//! probabilities from a diagonal-covariance Gaussian mixture.

use faer::{Mat, MatRef};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::linalg::gather_rows;
use crate::rng::stream;

const MIN_VARIANCE: f64 = 1e-8;

/// EM settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmConfig {
    pub components: usize,
    pub restarts: usize,
    /// Stop once the relative log-likelihood improvement drops below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self { components: 2, restarts: 5, tol: 1e-6, max_iter: 200 }
    }
}

/// Gaussian mixture with diagonal covariances.
#[derive(Debug, Clone)]
pub struct GmmModel {
    weights: Vec<f64>,
    /// K x d.
    means: Mat<f64>,
    /// K x d.
    variances: Mat<f64>,
    log_likelihood_trace: Vec<f64>,
}

impl GmmModel {
    pub fn new(weights: Vec<f64>, means: Mat<f64>, variances: Mat<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.nrows() != k || variances.nrows() != k || means.ncols() != variances.ncols() {
            return Err(config("mixture parameter shapes disagree"));
        }
        if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-10 || weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(config("mixture weights must lie on the simplex"));
        }
        if (0..k).any(|i| (0..variances.ncols()).any(|j| !(variances[(i, j)] > 0.0))) {
            return Err(config("mixture variances must be positive"));
        }
        Ok(Self { weights, means, variances, log_likelihood_trace: Vec::new() })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> MatRef<'_, f64> {
        self.means.as_ref()
    }

    pub fn variances(&self) -> MatRef<'_, f64> {
        self.variances.as_ref()
    }

    /// Total log-likelihood recorded at every EM iteration.
    pub fn log_likelihood_trace(&self) -> &[f64] {
        &self.log_likelihood_trace
    }

    pub fn final_log_likelihood(&self) -> f64 {
        self.log_likelihood_trace.last().copied().unwrap_or(f64::NEG_INFINITY)
    }

    /// Per-row log joint densities `log pi_k + log N(x | mu_k, diag v_k)`.
    fn log_joint(&self, x: MatRef<'_, f64>) -> Mat<f64> {
        let (k, d) = (self.components(), self.dim());
        let consts: Vec<f64> = (0..k)
            .map(|c| {
                self.weights[c].ln()
                    - 0.5 * (0..d).map(|j| (2.0 * std::f64::consts::PI * self.variances[(c, j)]).ln()).sum::<f64>()
            })
            .collect();
        Mat::from_fn(x.nrows(), k, |i, c| {
            consts[c]
                - 0.5
                    * (0..d)
                        .map(|j| {
                            let r = x[(i, j)] - self.means[(c, j)];
                            r * r / self.variances[(c, j)]
                        })
                        .sum::<f64>()
        })
    }

    /// Normalise log joints in place into responsibilities; returns total log-likelihood.
    fn normalise(joint: &mut Mat<f64>) -> f64 {
        let mut ll = 0.0;
        for i in 0..joint.nrows() {
            let max = (0..joint.ncols()).map(|c| joint[(i, c)]).fold(f64::NEG_INFINITY, f64::max);
            let lse = max + (0..joint.ncols()).map(|c| (joint[(i, c)] - max).exp()).sum::<f64>().ln();
            for c in 0..joint.ncols() {
                joint[(i, c)] = (joint[(i, c)] - lse).exp();
            }
            ll += lse;
        }
        ll
    }
}

/// Component responsibilities for each row of `x` (rows on the simplex).
pub fn gmm_posterior(model: &GmmModel, x: MatRef<'_, f64>) -> Result<Mat<f64>> {
    if x.ncols() != model.dim() {
        return Err(config(format!("mixture has {} dimensions, data has {}", model.dim(), x.ncols())));
    }
    let mut joint = model.log_joint(x);
    GmmModel::normalise(&mut joint);
    Ok(joint)
}

/// Seeded farthest-point initial means: a random first row, then repeatedly
/// the row farthest from all chosen rows.
fn farthest_point_init<R: Rng + ?Sized>(data: MatRef<'_, f64>, k: usize, rng: &mut R) -> Vec<usize> {
    let n = data.nrows();
    let dist = |a: usize, b: usize| (0..data.ncols()).map(|j| (data[(a, j)] - data[(b, j)]).powi(2)).sum::<f64>();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = (0..n).map(|i| dist(i, chosen[0])).collect();
    while chosen.len() < k {
        let next = (0..n).max_by(|&a, &b| nearest[a].total_cmp(&nearest[b]).then(b.cmp(&a))).unwrap();
        chosen.push(next);
        for i in 0..n {
            nearest[i] = nearest[i].min(dist(i, next));
        }
    }
    chosen
}

fn em_once<R: Rng + ?Sized>(data: MatRef<'_, f64>, cfg: &GmmConfig, rng: &mut R) -> Option<GmmModel> {
    let (n, d, k) = (data.nrows(), data.ncols(), cfg.components);
    let init = farthest_point_init(data, k, rng);
    let global_var: Vec<f64> = (0..d)
        .map(|j| {
            let mu = data.col(j).sum() / n as f64;
            (0..n).map(|i| (data[(i, j)] - mu).powi(2)).sum::<f64>() / n as f64
        })
        .collect();
    let mut model = GmmModel {
        weights: vec![1.0 / k as f64; k],
        means: gather_rows(data, &init),
        variances: Mat::from_fn(k, d, |_, j| global_var[j]),
        log_likelihood_trace: Vec::new(),
    };
    for it in 0..=cfg.max_iter {
        let mut resp = model.log_joint(data);
        let ll = GmmModel::normalise(&mut resp);
        if !ll.is_finite() {
            return None;
        }
        let prev = model.log_likelihood_trace.last().copied();
        model.log_likelihood_trace.push(ll);
        if let Some(p) = prev {
            if (ll - p) / p.abs().max(1e-300) < cfg.tol {
                break;
            }
        }
        if it == cfg.max_iter {
            break;
        }
        // M-step
        for c in 0..k {
            let nk: f64 = (0..n).map(|i| resp[(i, c)]).sum();
            if !(nk > 0.0) {
                return None;
            }
            model.weights[c] = nk / n as f64;
            for j in 0..d {
                let mu = (0..n).map(|i| resp[(i, c)] * data[(i, j)]).sum::<f64>() / nk;
                let var = (0..n).map(|i| resp[(i, c)] * (data[(i, j)] - mu).powi(2)).sum::<f64>() / nk;
                if !(var >= MIN_VARIANCE) {
                    return None;
                }
                model.means[(c, j)] = mu;
                model.variances[(c, j)] = var;
            }
        }
        let total: f64 = model.weights.iter().sum();
        model.weights.iter_mut().for_each(|w| *w /= total);
    }
    Some(model)
}

/// EM fit, best of `cfg.restarts` seeded restarts by final log-likelihood.
/// A restart whose component variance collapses below 1e-8 is discarded.
pub fn fit_gmm_em<R: Rng + ?Sized>(data: MatRef<'_, f64>, cfg: &GmmConfig, rng: &mut R) -> Result<GmmModel> {
    let (n, k) = (data.nrows(), cfg.components);
    if k < 2 {
        return Err(config(format!("a membership mixture needs at least 2 components, got {k}")));
    }
    if n < 2 * k {
        return Err(config(format!("{n} rows are too few for {k} components")));
    }
    if data.ncols() == 0 || cfg.restarts == 0 || cfg.max_iter == 0 || !(cfg.tol > 0.0) {
        return Err(config("invalid mixture fit settings"));
    }
    let seeds: Vec<u64> = (0..cfg.restarts).map(|_| rng.random()).collect();
    seeds
        .into_iter()
        .filter_map(|s| em_once(data, cfg, &mut stream(s)))
        .max_by(|a, b| a.final_log_likelihood().total_cmp(&b.final_log_likelihood()))
        .ok_or_else(|| Error::DegenerateData(format!("all {} mixture restarts collapsed", cfg.restarts)))
}

/// Maps raw feature rows to context rows.
pub trait ContextProvider: Send + Sync {
    fn contexts(&self, features: MatRef<'_, f64>) -> Result<Mat<f64>>;
}

/// Uses selected feature columns (all when `columns` is empty) as context.
#[derive(Debug, Clone, Default)]
pub struct PassThrough {
    pub columns: Vec<usize>,
}

impl ContextProvider for PassThrough {
    fn contexts(&self, features: MatRef<'_, f64>) -> Result<Mat<f64>> {
        if self.columns.is_empty() {
            return Ok(features.to_owned());
        }
        if let Some(&bad) = self.columns.iter().find(|&&j| j >= features.ncols()) {
            return Err(config(format!("context column {bad} out of range for {} columns", features.ncols())));
        }
        Ok(Mat::from_fn(features.nrows(), self.columns.len(), |i, j| features[(i, self.columns[j])]))
    }
}

/// Membership probabilities from a fitted mixture. With `column` set only
/// that responsibility is returned, otherwise the full simplex vector.
#[derive(Debug, Clone)]
pub struct GmmMembership {
    pub model: GmmModel,
    pub column: Option<usize>,
}

impl ContextProvider for GmmMembership {
    fn contexts(&self, features: MatRef<'_, f64>) -> Result<Mat<f64>> {
        let post = gmm_posterior(&self.model, features)?;
        match self.column {
            None => Ok(post),
            Some(c) if c < post.ncols() => Ok(Mat::from_fn(post.nrows(), 1, |i, _| post[(i, c)])),
            Some(c) => Err(config(format!("membership column {c} out of range"))),
        }
    }
}
