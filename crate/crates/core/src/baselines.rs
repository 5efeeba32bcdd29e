//! Baseline detectors: the biased MMD two-sample test, and MMD after
//! density-ratio rejection subsampling of the reference set (MMD-Sub).

use std::collections::BTreeMap;

use faer::{Mat, MatRef};
use rand::Rng;

use crate::aditt::{split_rows, Domain, SampleBatch};
use crate::error::{config, Error, Result};
use crate::kernel::{pairwise_sq_distances, rbf_gram, KernelSpec};
use crate::linalg::gather_rows;
use crate::permutation::{unconditional_permutation_test, DetectionReport, DetectorConfig, Method, PooledStatistic};
use crate::rng::substream;

/// Biased squared MMD between the rows of `x0` and `x1`.
pub fn mmd_squared_biased(x0: MatRef<'_, f64>, x1: MatRef<'_, f64>, k_spec: KernelSpec) -> Result<f64> {
    if x0.nrows() == 0 || x1.nrows() == 0 {
        return Err(config("MMD needs at least one row in each sample"));
    }
    let mean = |a: MatRef<'_, f64>, b: MatRef<'_, f64>| -> Result<f64> {
        let g = rbf_gram(a, b, k_spec)?;
        Ok(g.entries().sum() / (a.nrows() * b.nrows()) as f64)
    };
    let v = mean(x0, x0)? + mean(x1, x1)? - 2.0 * mean(x0, x1)?;
    Ok(v.max(0.0))
}

/// Biased squared MMD over partitions of a fixed pooled sample, using one
/// precomputed Gram matrix.
#[derive(Debug, Clone)]
pub struct MmdStatistic {
    gram: Mat<f64>,
    k_spec: KernelSpec,
}

impl MmdStatistic {
    pub fn new(pooled: MatRef<'_, f64>, k_spec: KernelSpec) -> Result<Self> {
        Ok(Self { gram: rbf_gram(pooled, pooled, k_spec)?.into_inner(), k_spec })
    }

    /// Pool `x0` above `x1`; group 0 is then rows `0..x0.nrows()`.
    pub fn from_samples(x0: MatRef<'_, f64>, x1: MatRef<'_, f64>, k_spec: KernelSpec) -> Result<Self> {
        if x0.ncols() != x1.ncols() {
            return Err(config("samples have different column counts"));
        }
        let n0 = x0.nrows();
        let pooled = Mat::from_fn(n0 + x1.nrows(), x0.ncols(), |i, j| if i < n0 { x0[(i, j)] } else { x1[(i - n0, j)] });
        Self::new(pooled.as_ref(), k_spec)
    }

    pub fn k_spec(&self) -> KernelSpec {
        self.k_spec
    }

    fn block_mean(&self, a: &[usize], b: &[usize]) -> f64 {
        let mut s = 0.0;
        for &j in b {
            let col = self.gram.col(j);
            for &i in a {
                s += col[i];
            }
        }
        s / (a.len() * b.len()) as f64
    }
}

impl PooledStatistic for MmdStatistic {
    fn len(&self) -> usize {
        self.gram.nrows()
    }

    fn evaluate(&self, g0: &[usize], g1: &[usize]) -> Result<f64> {
        if g0.is_empty() || g1.is_empty() {
            return Err(config("MMD needs at least one row in each sample"));
        }
        Ok((self.block_mean(g0, g0) + self.block_mean(g1, g1) - 2.0 * self.block_mean(g0, g1)).max(0.0))
    }
}

/// MMD permutation test; `k_spec = None` uses the median heuristic on the
/// pooled rows.
pub fn mmd_two_sample_test(
    x0: MatRef<'_, f64>,
    x1: MatRef<'_, f64>,
    k_spec: Option<KernelSpec>,
    n_perm: usize,
    seed: u64,
    smoothed: bool,
) -> Result<DetectionReport> {
    if x0.ncols() != x1.ncols() {
        return Err(config("samples have different column counts"));
    }
    let n0 = x0.nrows();
    let pooled = Mat::from_fn(n0 + x1.nrows(), x0.ncols(), |i, j| if i < n0 { x0[(i, j)] } else { x1[(i - n0, j)] });
    let k_spec = match k_spec {
        Some(k) => k,
        None => KernelSpec::median_heuristic(pooled.as_ref())?,
    };
    let stat = MmdStatistic::new(pooled.as_ref(), k_spec)?;
    let mut report = unconditional_permutation_test(&stat, n0, n_perm, seed, smoothed)?;
    report.diagnostics.insert("k_bandwidth".into(), k_spec.bandwidth());
    Ok(report)
}

/// Plain MMD test of reference against deployment statistics of a batch.
pub fn mmd_batch_test(batch: &SampleBatch, cfg: &DetectorConfig) -> Result<DetectionReport> {
    cfg.validate()?;
    let x0 = gather_rows(batch.statistics(), &batch.indices_of(Domain::Reference));
    let x1 = gather_rows(batch.statistics(), &batch.indices_of(Domain::Deployment));
    let k = cfg.k_bandwidth.map(KernelSpec::new).transpose()?;
    let mut report = mmd_two_sample_test(x0.as_ref(), x1.as_ref(), k, cfg.n_perm, cfg.seed, cfg.smoothed_p_value)?;
    report.config = Some(cfg.clone());
    Ok(report)
}

/// Isotropic Gaussian kernel density estimate.
#[derive(Debug, Clone)]
pub struct KdeModel {
    points: Mat<f64>,
    bandwidth: f64,
}

impl KdeModel {
    pub fn new(points: Mat<f64>, bandwidth: f64) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(config("density model needs at least one point and one column"));
        }
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(config(format!("density bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Self { points, bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn points(&self) -> MatRef<'_, f64> {
        self.points.as_ref()
    }

    /// Log density at each row of `queries`.
    pub fn log_density(&self, queries: MatRef<'_, f64>) -> Result<Vec<f64>> {
        if queries.ncols() != self.points.ncols() {
            return Err(config(format!(
                "density model has {} columns, query has {}",
                self.points.ncols(),
                queries.ncols()
            )));
        }
        let d2 = pairwise_sq_distances(queries, self.points.as_ref())?;
        let (m, q) = (self.points.nrows() as f64, self.points.ncols() as f64);
        let h2 = self.bandwidth * self.bandwidth;
        let log_norm = -0.5 * q * (2.0 * std::f64::consts::PI * h2).ln() - m.ln();
        Ok((0..queries.nrows())
            .map(|i| {
                let terms = (0..d2.ncols()).map(|j| -d2[(i, j)] / (2.0 * h2));
                let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
                max + terms.map(|t| (t - max).exp()).sum::<f64>().ln() + log_norm
            })
            .collect())
    }
}

/// Gaussian KDE with Scott's-rule bandwidth `m^(-1/(q+4))` times the mean
/// per-dimension sample standard deviation.
pub fn kde_fit(points: MatRef<'_, f64>) -> Result<KdeModel> {
    let (m, q) = (points.nrows(), points.ncols());
    if m < 2 {
        return Err(config(format!("density fit needs at least 2 points, got {m}")));
    }
    if q == 0 {
        return Err(config("density fit needs at least one column"));
    }
    let mean_std = (0..q)
        .map(|j| {
            let col = points.col(j);
            let mu = col.sum() / m as f64;
            ((0..m).map(|i| (col[i] - mu).powi(2)).sum::<f64>() / (m - 1) as f64).sqrt()
        })
        .sum::<f64>()
        / q as f64;
    if !(mean_std > 0.0) {
        return Err(Error::DegenerateData("density fit on data with zero variance".into()));
    }
    KdeModel::new(points.to_owned(), (m as f64).powf(-1.0 / (q as f64 + 4.0)) * mean_std)
}

/// Density of `model` at a single point.
pub fn kde_density(model: &KdeModel, c: &[f64]) -> Result<f64> {
    let q = Mat::from_fn(1, c.len(), |_, j| c[j]);
    Ok(model.log_density(q.as_ref())?[0].exp())
}

/// Retain row `i` of `ref_contexts` with probability `r_i / max_j r_j`,
/// `r = p1 / p0`, computed in the log domain.
pub fn rejection_subsample<R: Rng + ?Sized>(
    ref_contexts: MatRef<'_, f64>,
    p0: &KdeModel,
    p1: &KdeModel,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let (l0, l1) = (p0.log_density(ref_contexts)?, p1.log_density(ref_contexts)?);
    let log_r: Vec<f64> = l1.iter().zip(&l0).map(|(a, b)| a - b).collect();
    let max = log_r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let retained: Vec<usize> = log_r
        .iter()
        .enumerate()
        .filter(|(_, &lr)| rng.random::<f64>() < (lr - max).exp().min(1.0) || lr == max)
        .map(|(i, _)| i)
        .collect();
    if retained.len() < 2 {
        return Err(Error::ResampleFailure { retained: retained.len() });
    }
    Ok(retained)
}

/// MMD-Sub: density models fitted on held-out portions of each domain's
/// contexts, rejection subsampling of the remaining reference rows toward
/// the deployment context density, then an MMD test against the remaining
/// deployment rows.
pub fn mmd_sub_test(batch: &SampleBatch, cfg: &DetectorConfig) -> Result<DetectionReport> {
    cfg.validate()?;
    batch.require_context()?;
    let mut rng = substream(cfg.seed, 0);
    let ref_split = split_rows(&batch.indices_of(Domain::Reference), cfg.holdout_fraction, &mut rng)?;
    let dep_split = split_rows(&batch.indices_of(Domain::Deployment), cfg.holdout_fraction, &mut rng)?;
    let ctx = batch.contexts();
    let p0 = kde_fit(gather_rows(ctx, ref_split.holdout()).as_ref())?;
    let p1 = kde_fit(gather_rows(ctx, dep_split.holdout()).as_ref())?;
    let candidates = ref_split.conditioning();
    let kept = rejection_subsample(gather_rows(ctx, candidates).as_ref(), &p0, &p1, &mut rng)?;
    let kept_rows: Vec<usize> = kept.iter().map(|&i| candidates[i]).collect();

    let x0 = gather_rows(batch.statistics(), &kept_rows);
    let x1 = gather_rows(batch.statistics(), dep_split.conditioning());
    let k = cfg.k_bandwidth.map(KernelSpec::new).transpose()?;
    let mut report = mmd_two_sample_test(x0.as_ref(), x1.as_ref(), k, cfg.n_perm, cfg.seed, cfg.smoothed_p_value)?;
    report.method = Method::MmdSub;
    report.config = Some(cfg.clone());
    let diag: &mut BTreeMap<String, f64> = &mut report.diagnostics;
    diag.insert("retained".into(), kept_rows.len() as f64);
    diag.insert("candidates".into(), candidates.len() as f64);
    diag.insert("kde_bandwidth_reference".into(), p0.bandwidth());
    diag.insert("kde_bandwidth_deployment".into(), p1.bandwidth());
    Ok(report)
}
