//! Gaussian RBF kernels, pairwise distances and the median heuristic.

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};

/// Gaussian RBF kernel `exp(-|x - x'|^2 / (2 sigma^2))` with bandwidth `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    bandwidth: f64,
}

impl KernelSpec {
    pub fn new(bandwidth: f64) -> Result<Self> {
        // the squared bandwidth must stay a normal float or the Gram entries turn to NaN
        if !(bandwidth.is_finite() && bandwidth > 0.0 && (2.0 * bandwidth * bandwidth).is_normal()) {
            return Err(config(format!("kernel bandwidth must be positive and finite, got {bandwidth}")));
        }
        Ok(Self { bandwidth })
    }

    /// Bandwidth set to the median pairwise distance of `points`.
    pub fn median_heuristic(points: MatRef<'_, f64>) -> Result<Self> {
        Self::new(median_heuristic_bandwidth(points)?)
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    #[inline]
    pub fn eval_sq_dist(&self, sq_dist: f64) -> f64 {
        (-sq_dist / (2.0 * self.bandwidth * self.bandwidth)).exp()
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        self.eval_sq_dist(d2)
    }
}

/// Dense kernel matrix between two point sets.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    entries: Mat<f64>,
}

impl GramMatrix {
    pub fn from_entries(entries: Mat<f64>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> MatRef<'_, f64> {
        self.entries.as_ref()
    }

    pub fn into_inner(self) -> Mat<f64> {
        self.entries
    }

    pub fn nrows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn transpose(&self) -> GramMatrix {
        GramMatrix { entries: self.entries.transpose().to_owned() }
    }
}

impl std::ops::Index<(usize, usize)> for GramMatrix {
    type Output = f64;
    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.entries[idx]
    }
}

/// Squared Euclidean distances between the rows of `a` and the rows of `b`.
///
/// Uses `|a|^2 + |b|^2 - 2 a.b`; rounding negatives are clamped to zero.
pub fn pairwise_sq_distances(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Result<Mat<f64>> {
    if a.ncols() != b.ncols() {
        return Err(config(format!(
            "dimension mismatch: {} columns vs {} columns",
            a.ncols(),
            b.ncols()
        )));
    }
    if a.ncols() == 0 {
        return Err(config("points must have at least one coordinate"));
    }
    let na: Vec<f64> = (0..a.nrows()).map(|i| a.row(i).squared_norm_l2()).collect();
    let nb: Vec<f64> = (0..b.nrows()).map(|j| b.row(j).squared_norm_l2()).collect();
    let cross = a * b.transpose();
    Ok(Mat::from_fn(a.nrows(), b.nrows(), |i, j| (na[i] + nb[j] - 2.0 * cross[(i, j)]).max(0.0)))
}

/// Squared distances at or below this fraction of the largest one are ties:
/// the expanded-norm distance formula cannot resolve them.
const TIE_REL_SQ: f64 = 64.0 * f64::EPSILON;

/// Median of the `n(n-1)/2` pairwise Euclidean distances between rows.
///
/// For an even number of pairs the lower middle order statistic is returned.
/// Duplicate rows contribute zero distances; only the diagonal is excluded.
/// When ties make up more than half the pairs (clustered or saturated data)
/// the median is taken over the non-tied distances instead.
pub fn median_heuristic_bandwidth(points: MatRef<'_, f64>) -> Result<f64> {
    let n = points.nrows();
    if n < 2 {
        return Err(config(format!("median heuristic needs at least 2 points, got {n}")));
    }
    let d2 = pairwise_sq_distances(points, points)?;
    let mut upper = Vec::with_capacity(n * (n - 1) / 2);
    for j in 1..n {
        for i in 0..j {
            upper.push(d2[(i, j)]);
        }
    }
    let max_sq = upper.iter().copied().fold(0.0, f64::max);
    if !(max_sq > 0.0) {
        return Err(Error::DegenerateData("all rows are identical; bandwidth would be 0".into()));
    }
    let lower_median = |v: &mut [f64]| {
        let mid = (v.len() - 1) / 2;
        *v.select_nth_unstable_by(mid, f64::total_cmp).1
    };
    let tie = TIE_REL_SQ * max_sq;
    let mut median_sq = lower_median(&mut upper);
    if median_sq <= tie {
        let mut distinct: Vec<f64> = upper.into_iter().filter(|&v| v > tie).collect();
        median_sq = lower_median(&mut distinct);
    }
    let median = median_sq.sqrt();
    KernelSpec::new(median)
        .map(|k| k.bandwidth())
        .map_err(|_| Error::DegenerateData(format!("median pairwise distance {median:e} is too small for a kernel")))
}

/// Gram matrix `exp(-|a_i - b_j|^2 / (2 sigma^2))`.
pub fn rbf_gram(a: MatRef<'_, f64>, b: MatRef<'_, f64>, spec: KernelSpec) -> Result<GramMatrix> {
    let mut d2 = pairwise_sq_distances(a, b)?;
    let scale = -1.0 / (2.0 * spec.bandwidth * spec.bandwidth);
    for j in 0..d2.ncols() {
        for i in 0..d2.nrows() {
            d2[(i, j)] = (d2[(i, j)] * scale).exp();
        }
    }
    Ok(GramMatrix { entries: d2 })
}
