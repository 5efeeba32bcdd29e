//! Conditional mean embedding regression.
//!
//! For one domain with statistics `s_i` and contexts `c_i`, the regularised
//! operator-valued kernel regression of `k(s_i, .)` on `c_i` has the solution
//! `f(c) = sum_i alpha_i(c) k(s_i, .)` with
//! `alpha(c) = (L + n lambda I)^{-1} l(c)`. A [`CmeFit`] stores the Cholesky
//! factor of `L + n lambda I` so the weights for many query contexts can be
//! obtained with one factorization.

use faer::linalg::solvers::{Llt, Solve};
use faer::{Mat, MatRef};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aditt::Domain;
use crate::error::{config, Result};
use crate::kernel::{rbf_gram, GramMatrix, KernelSpec};
use crate::linalg::{colwise_dot, colwise_quadratic, gather, gather_rows, shifted_llt};

/// Fitted conditional-mean-embedding regression for one domain.
pub struct CmeFit {
    domain: Domain,
    contexts: Mat<f64>,
    lambda: f64,
    context_kernel: KernelSpec,
    factor: Llt<f64>,
}

impl std::fmt::Debug for CmeFit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CmeFit")
            .field("domain", &self.domain)
            .field("n", &self.contexts.nrows())
            .field("lambda", &self.lambda)
            .field("context_kernel", &self.context_kernel)
            .finish()
    }
}

/// Fit the regression on `contexts` with regulariser `lambda`.
pub fn fit_cme(contexts: MatRef<'_, f64>, lambda: f64, context_kernel: KernelSpec, domain: Domain) -> Result<CmeFit> {
    let gram = rbf_gram(contexts, contexts, context_kernel)?;
    CmeFit::from_gram(contexts.to_owned(), gram.into_inner(), lambda, context_kernel, domain)
}

impl CmeFit {
    /// Build from a precomputed context Gram matrix `L` over `contexts`.
    pub fn from_gram(
        contexts: Mat<f64>,
        gram: Mat<f64>,
        lambda: f64,
        context_kernel: KernelSpec,
        domain: Domain,
    ) -> Result<Self> {
        let n = contexts.nrows();
        if n == 0 {
            return Err(config("conditional mean embedding needs at least one sample"));
        }
        if gram.nrows() != n || gram.ncols() != n {
            return Err(config(format!(
                "context gram is {}x{}, expected {n}x{n}",
                gram.nrows(),
                gram.ncols()
            )));
        }
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(config(format!("regularisation must be positive, got {lambda}")));
        }
        let factor = shifted_llt(gram, n as f64 * lambda)?;
        Ok(Self { domain, contexts, lambda, context_kernel, factor })
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn len(&self) -> usize {
        self.contexts.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.nrows() == 0
    }

    pub fn contexts(&self) -> MatRef<'_, f64> {
        self.contexts.as_ref()
    }

    pub fn context_kernel(&self) -> KernelSpec {
        self.context_kernel
    }

    /// `(L + n lambda I)^{-1} rhs`.
    pub fn solve(&self, rhs: MatRef<'_, f64>) -> Mat<f64> {
        self.factor.solve(rhs)
    }

    /// Reconstruction of `L + n lambda I` from the stored factor.
    pub fn regularized_matrix(&self) -> Mat<f64> {
        crate::linalg::reconstruct(&self.factor)
    }

    /// Embedding weights `(L + n lambda I)^{-1} l(c)`, one column per query row.
    pub fn weights(&self, queries: MatRef<'_, f64>) -> Result<Mat<f64>> {
        let l = rbf_gram(self.contexts.as_ref(), queries, self.context_kernel)?;
        Ok(self.solve(l.entries()))
    }
}

fn check_shape(name: &str, g: &GramMatrix, rows: usize, cols: usize) -> Result<()> {
    if g.nrows() != rows || g.ncols() != cols {
        return Err(config(format!(
            "{name} is {}x{}, expected {rows}x{cols}",
            g.nrows(),
            g.ncols()
        )));
    }
    Ok(())
}

/// Raw CoDiTE estimates `|mu_0(c) - mu_1(c)|^2` for every row of `queries`.
///
/// `k00`, `k11` and `k01` are statistic-kernel Gram matrices over the
/// samples the two fits were trained on. Values may be slightly negative
/// from rounding.
pub fn codite_mmd_many(
    fit0: &CmeFit,
    fit1: &CmeFit,
    k00: &GramMatrix,
    k11: &GramMatrix,
    k01: &GramMatrix,
    queries: MatRef<'_, f64>,
) -> Result<Vec<f64>> {
    let (n0, n1) = (fit0.len(), fit1.len());
    check_shape("K00", k00, n0, n0)?;
    check_shape("K11", k11, n1, n1)?;
    check_shape("K01", k01, n0, n1)?;
    let a0 = fit0.weights(queries)?;
    let a1 = fit1.weights(queries)?;
    Ok(codite_from_weights(a0.as_ref(), a1.as_ref(), k00.entries(), k11.entries(), k01.entries()))
}

/// Raw CoDiTE estimate at a single context.
pub fn codite_mmd(
    fit0: &CmeFit,
    fit1: &CmeFit,
    k00: &GramMatrix,
    k11: &GramMatrix,
    k01: &GramMatrix,
    context: &[f64],
) -> Result<f64> {
    let q = Mat::from_fn(1, context.len(), |_, j| context[j]);
    Ok(codite_mmd_many(fit0, fit1, k00, k11, k01, q.as_ref())?[0])
}

pub(crate) fn codite_from_weights(
    a0: MatRef<'_, f64>,
    a1: MatRef<'_, f64>,
    k00: MatRef<'_, f64>,
    k11: MatRef<'_, f64>,
    k01: MatRef<'_, f64>,
) -> Vec<f64> {
    let q0 = colwise_quadratic(a0, k00, a0);
    let q1 = colwise_quadratic(a1, k11, a1);
    let cross = colwise_quadratic(a0, k01, a1);
    q0.iter().zip(&q1).zip(&cross).map(|((a, b), c)| a + b - 2.0 * c).collect()
}

/// Out-of-sample squared RKHS errors `|k(s, .) - f(c)|^2` for held-out pairs.
///
/// * `k_train_train`: statistic kernel over the training samples (n x n)
/// * `k_train_out`: statistic kernel between training and held-out samples (n x m)
/// * `k_out_diag`: `k(s, s)` for each held-out sample
/// * `l_out`: context kernel between training and held-out contexts (n x m)
pub fn cme_holdout_error(
    fit: &CmeFit,
    k_train_train: &GramMatrix,
    k_train_out: &GramMatrix,
    k_out_diag: &[f64],
    l_out: &GramMatrix,
) -> Result<Vec<f64>> {
    let n = fit.len();
    let m = k_out_diag.len();
    check_shape("K_train_train", k_train_train, n, n)?;
    check_shape("K_train_out", k_train_out, n, m)?;
    check_shape("L_out", l_out, n, m)?;
    let a = fit.solve(l_out.entries());
    Ok(holdout_error_from_weights(a.as_ref(), k_train_train.entries(), k_train_out.entries(), k_out_diag))
}

fn holdout_error_from_weights(
    a: MatRef<'_, f64>,
    k_train: MatRef<'_, f64>,
    k_train_out: MatRef<'_, f64>,
    k_out_diag: &[f64],
) -> Vec<f64> {
    let quad = colwise_quadratic(a, k_train, a);
    let cross = colwise_dot(a, k_train_out);
    k_out_diag.iter().zip(quad).zip(cross).map(|((d, q), c)| d + q - 2.0 * c).collect()
}

/// K-fold cross-validation settings for the regulariser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub grid: Vec<f64>,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self { folds: 5, grid: vec![1e-4, 1e-3, 1e-2, 1e-1] }
    }
}

/// Summed out-of-fold error for every grid value.
#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub selected: f64,
    pub errors: Vec<(f64, f64)>,
}

/// Seeded shuffle followed by contiguous fold assignment.
pub fn fold_assignment<R: Rng + ?Sized>(n: usize, folds: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    (0..folds).map(|f| order[f * n / folds..(f + 1) * n / folds].to_vec()).collect()
}

/// Choose the regulariser from `cfg.grid` minimising summed out-of-fold
/// error. Ties go to the larger value.
pub fn tune_lambda_cv<R: Rng + ?Sized>(
    statistics: MatRef<'_, f64>,
    contexts: MatRef<'_, f64>,
    cfg: &CvConfig,
    k_spec: KernelSpec,
    l_spec: KernelSpec,
    rng: &mut R,
) -> Result<f64> {
    Ok(tune_lambda_cv_detailed(statistics, contexts, cfg, k_spec, l_spec, rng)?.selected)
}

pub fn tune_lambda_cv_detailed<R: Rng + ?Sized>(
    statistics: MatRef<'_, f64>,
    contexts: MatRef<'_, f64>,
    cfg: &CvConfig,
    k_spec: KernelSpec,
    l_spec: KernelSpec,
    rng: &mut R,
) -> Result<CvOutcome> {
    let n = statistics.nrows();
    if contexts.nrows() != n {
        return Err(config(format!("{} statistics rows vs {} context rows", n, contexts.nrows())));
    }
    if cfg.folds < 2 {
        return Err(config(format!("cross-validation needs at least 2 folds, got {}", cfg.folds)));
    }
    if n < cfg.folds {
        return Err(config(format!("{n} samples cannot be split into {} folds", cfg.folds)));
    }
    if cfg.grid.is_empty() || cfg.grid.iter().any(|&l| !(l.is_finite() && l > 0.0)) {
        return Err(config("regularisation grid must be nonempty and positive"));
    }
    let k = rbf_gram(statistics, statistics, k_spec)?.into_inner();
    let l = rbf_gram(contexts, contexts, l_spec)?.into_inner();
    let folds = fold_assignment(n, cfg.folds, rng);

    let mut errors = Vec::with_capacity(cfg.grid.len());
    for &lambda in &cfg.grid {
        let mut total = 0.0;
        for out in &folds {
            let train: Vec<usize> = {
                let mut mask = vec![true; n];
                out.iter().for_each(|&i| mask[i] = false);
                (0..n).filter(|&i| mask[i]).collect()
            };
            let fit = CmeFit::from_gram(
                gather_rows(contexts, &train),
                gather(l.as_ref(), &train, &train),
                lambda,
                l_spec,
                Domain::Reference,
            )?;
            let a = fit.solve(gather(l.as_ref(), &train, out).as_ref());
            let diag: Vec<f64> = out.iter().map(|&i| k[(i, i)]).collect();
            let errs = holdout_error_from_weights(
                a.as_ref(),
                gather(k.as_ref(), &train, &train).as_ref(),
                gather(k.as_ref(), &train, out).as_ref(),
                &diag,
            );
            total += errs.iter().sum::<f64>();
        }
        errors.push((lambda, total));
    }

    let mut best = errors[0];
    for &(lambda, err) in &errors[1..] {
        let tol = 1e-12 * best.1.abs().max(err.abs());
        if err < best.1 - tol || ((err - best.1).abs() <= tol && lambda > best.0) {
            best = (lambda, err);
        }
    }
    Ok(CvOutcome { selected: best.0, errors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use faer::mat;
    use rand_distr::{Distribution, StandardNormal};

    fn random_points(n: usize, d: usize, seed: u64) -> Mat<f64> {
        let mut rng = stream(seed);
        Mat::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng))
    }

    fn unit() -> KernelSpec {
        KernelSpec::new(1.0).unwrap()
    }

    #[test]
    fn single_point_fit_solves_scalar() {
        let fit = fit_cme(mat![[0.0]].as_ref(), 0.5, unit(), Domain::Reference).unwrap();
        let x = fit.solve(mat![[3.0]].as_ref());
        assert!((x[(0, 0)] - 2.0).abs() < 1e-14);
        assert!((fit.regularized_matrix()[(0, 0)] - 1.5).abs() < 1e-14);
    }

    #[test]
    fn duplicate_contexts_stay_positive_definite() {
        let lambda = 0.01;
        let fit = fit_cme(mat![[0.0], [0.0]].as_ref(), lambda, unit(), Domain::Deployment).unwrap();
        let m = fit.regularized_matrix();
        let expected = mat![[1.0 + 2.0 * lambda, 1.0], [1.0, 1.0 + 2.0 * lambda]];
        assert!((&m - &expected).norm_l2() < 1e-12);
    }

    #[test]
    fn factor_reconstructs_and_solve_matches_dense_inverse() {
        use faer::linalg::solvers::DenseSolveCore;
        let c = random_points(20, 2, 3);
        let lambda = 0.05;
        let fit = fit_cme(c.as_ref(), lambda, unit(), Domain::Reference).unwrap();
        let mut reg = rbf_gram(c.as_ref(), c.as_ref(), unit()).unwrap().into_inner();
        for i in 0..20 {
            reg[(i, i)] += 20.0 * lambda;
        }
        let rel = (&fit.regularized_matrix() - &reg).norm_l2() / reg.norm_l2();
        assert!(rel < 1e-8, "{rel}");

        let inv = reg.partial_piv_lu().inverse();
        let l = rbf_gram(c.as_ref(), c.as_ref(), unit()).unwrap().into_inner();
        let col = l.col(4).as_mat().to_owned();
        let via_factor = fit.solve(col.as_ref());
        let via_inverse = &inv * &col;
        assert!((&via_factor - &via_inverse).norm_l2() < 1e-10);
    }

    #[test]
    fn rejects_bad_lambda() {
        assert!(fit_cme(mat![[0.0]].as_ref(), 0.0, unit(), Domain::Reference).is_err());
        assert!(fit_cme(mat![[0.0]].as_ref(), -1.0, unit(), Domain::Reference).is_err());
    }

    #[test]
    fn codite_one_by_one_closed_form() {
        let k = unit();
        let lambda = 0.3;
        let (s0, s1) = (mat![[0.2]], mat![[1.1]]);
        let c = mat![[0.5]];
        let fit0 = fit_cme(c.as_ref(), lambda, KernelSpec::new(1e6).unwrap(), Domain::Reference).unwrap();
        let fit1 = fit_cme(c.as_ref(), lambda, KernelSpec::new(1e6).unwrap(), Domain::Deployment).unwrap();
        let k00 = rbf_gram(s0.as_ref(), s0.as_ref(), k).unwrap();
        let k11 = rbf_gram(s1.as_ref(), s1.as_ref(), k).unwrap();
        let k01 = rbf_gram(s0.as_ref(), s1.as_ref(), k).unwrap();
        let u = codite_mmd(&fit0, &fit1, &k00, &k11, &k01, &[0.5]).unwrap();
        let expected = (2.0 - 2.0 * k.eval(&[0.2], &[1.1])) / (1.0 + lambda).powi(2);
        assert!((u - expected).abs() < 1e-14, "{u} vs {expected}");
    }

    #[test]
    fn codite_zero_for_identical_samples() {
        let s = random_points(6, 2, 11);
        let c = random_points(6, 1, 12);
        let k = KernelSpec::new(1.3).unwrap();
        let l = KernelSpec::new(0.8).unwrap();
        let fit0 = fit_cme(c.as_ref(), 0.01, l, Domain::Reference).unwrap();
        let fit1 = fit_cme(c.as_ref(), 0.01, l, Domain::Deployment).unwrap();
        let kk = rbf_gram(s.as_ref(), s.as_ref(), k).unwrap();
        let u = codite_mmd(&fit0, &fit1, &kk, &kk, &kk, &[0.1]).unwrap();
        assert!(u.abs() < 1e-10, "{u}");
    }

    #[test]
    fn codite_shape_mismatch() {
        let c = random_points(3, 1, 1);
        let fit = fit_cme(c.as_ref(), 0.1, unit(), Domain::Reference).unwrap();
        let g3 = rbf_gram(c.as_ref(), c.as_ref(), unit()).unwrap();
        let g2 = rbf_gram(c.subrows(0, 2), c.subrows(0, 2), unit()).unwrap();
        assert!(codite_mmd(&fit, &fit, &g2, &g3, &g3, &[0.0]).is_err());
    }

    #[test]
    fn holdout_error_scalar_closed_form() {
        let (k, l) = (KernelSpec::new(0.9).unwrap(), KernelSpec::new(1.4).unwrap());
        let lambda = 1.0;
        let (s0, c0) = (0.3, -0.2);
        let (s, c) = (1.0, 0.4);
        let fit = fit_cme(mat![[c0]].as_ref(), lambda, l, Domain::Reference).unwrap();
        let ktt = GramMatrix::from_entries(mat![[1.0]]);
        let kto = GramMatrix::from_entries(mat![[k.eval(&[s0], &[s])]]);
        let lo = GramMatrix::from_entries(mat![[l.eval(&[c0], &[c])]]);
        let err = cme_holdout_error(&fit, &ktt, &kto, &[1.0], &lo).unwrap()[0];
        let lc = l.eval(&[c], &[c0]);
        let expected = 1.0 + lc * lc / (1.0 + lambda).powi(2) - 2.0 * lc * k.eval(&[s0], &[s]) / (1.0 + lambda);
        assert!((err - expected).abs() < 1e-14);
    }

    #[test]
    fn holdout_error_interpolation_limit() {
        let fit = fit_cme(mat![[0.7]].as_ref(), 1e-12, unit(), Domain::Reference).unwrap();
        let one = GramMatrix::from_entries(mat![[1.0]]);
        let err = cme_holdout_error(&fit, &one, &one, &[1.0], &one).unwrap()[0];
        assert!(err.abs() < 1e-10);
    }

    #[test]
    fn singleton_grid_is_forced() {
        let s = random_points(10, 1, 5);
        let c = random_points(10, 1, 6);
        let cfg = CvConfig { folds: 5, grid: vec![0.37] };
        let got = tune_lambda_cv(s.as_ref(), c.as_ref(), &cfg, unit(), unit(), &mut stream(1)).unwrap();
        assert_eq!(got, 0.37);
    }

    #[test]
    fn cv_rejects_too_few_samples() {
        let s = random_points(3, 1, 5);
        let err = tune_lambda_cv(s.as_ref(), s.as_ref(), &CvConfig::default(), unit(), unit(), &mut stream(1));
        assert!(err.is_err());
    }

    #[test]
    fn cv_is_deterministic_per_seed() {
        let s = random_points(30, 1, 8);
        let c = random_points(30, 1, 9);
        let a = tune_lambda_cv_detailed(s.as_ref(), c.as_ref(), &CvConfig::default(), unit(), unit(), &mut stream(4)).unwrap();
        let b = tune_lambda_cv_detailed(s.as_ref(), c.as_ref(), &CvConfig::default(), unit(), unit(), &mut stream(4)).unwrap();
        assert_eq!(a.selected, b.selected);
        assert_eq!(a.errors, b.errors);
    }
}
