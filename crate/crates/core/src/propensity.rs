//! Propensity score estimation and conditional domain reassignment.
//!
//! `e(c) = P(Z = 1 | C = c)` is estimated by kernel logistic regression on
//! the representer expansion `f(c) = sum_i alpha_i l(c, c_i) + b`, minimising
//! the mean logistic loss plus `reg * alpha' L alpha` with damped IRLS steps.

use faer::{Mat, MatRef};
use rand::Rng;

use crate::aditt::Domain;
use crate::error::{config, Error, Result};
use crate::kernel::{rbf_gram, KernelSpec};
use crate::linalg::shifted_llt;

const MAX_NEWTON: usize = 100;
const GRAD_TOL: f64 = 1e-6;
const MIN_WEIGHT: f64 = 1e-10;
/// Probabilities are kept this far inside (0, 1).
const PROB_EPS: f64 = 1e-12;
pub const MAX_REDRAWS: usize = 100;
/// Smallest domain size accepted from a reassignment.
pub const MIN_PER_DOMAIN: usize = 2;

/// Fitted estimate of the propensity score.
#[derive(Debug, Clone)]
pub struct PropensityModel {
    train_contexts: Mat<f64>,
    coefficients: Vec<f64>,
    intercept: f64,
    context_kernel: KernelSpec,
    regularization: f64,
    converged: bool,
    iterations: usize,
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean logistic loss plus `reg * alpha' L alpha`.
fn objective(gram: MatRef<'_, f64>, z: &[f64], alpha: &[f64], b: f64, reg: f64) -> f64 {
    let n = z.len();
    let f = scores(gram, alpha, b);
    let loss: f64 = f.iter().zip(z).map(|(fi, zi)| softplus(*fi) - zi * fi).sum::<f64>() / n as f64;
    let la = scores(gram, alpha, 0.0);
    loss + reg * alpha.iter().zip(&la).map(|(a, l)| a * l).sum::<f64>()
}

/// `L alpha + b` for a symmetric `L`.
fn scores(gram: MatRef<'_, f64>, alpha: &[f64], b: f64) -> Vec<f64> {
    let n = alpha.len();
    (0..gram.nrows())
        .map(|i| (0..n).map(|j| gram[(i, j)] * alpha[j]).sum::<f64>() + b)
        .collect()
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Kernel logistic regression of `domains` on `contexts`.
///
/// Non-convergence within 100 Newton steps is not an error; check
/// [`PropensityModel::converged`].
pub fn fit_propensity(
    contexts: MatRef<'_, f64>,
    domains: &[Domain],
    reg: f64,
    l_spec: KernelSpec,
) -> Result<PropensityModel> {
    let gram = rbf_gram(contexts, contexts, l_spec)?.into_inner();
    fit_propensity_with_gram(contexts, gram.as_ref(), domains, reg, l_spec)
}

/// As [`fit_propensity`] with the context Gram matrix supplied.
pub(crate) fn fit_propensity_with_gram(
    contexts: MatRef<'_, f64>,
    gram: MatRef<'_, f64>,
    domains: &[Domain],
    reg: f64,
    l_spec: KernelSpec,
) -> Result<PropensityModel> {
    let n = domains.len();
    if contexts.nrows() != n || gram.nrows() != n || gram.ncols() != n {
        return Err(config("propensity inputs have inconsistent row counts"));
    }
    if n < 4 {
        return Err(config(format!("propensity fit needs at least 4 samples, got {n}")));
    }
    if !(reg.is_finite() && reg > 0.0) {
        return Err(config(format!("propensity regularization must be positive, got {reg}")));
    }
    let z: Vec<f64> = domains.iter().map(|d| d.bit() as f64).collect();
    let n1: f64 = z.iter().sum();
    if n1 == 0.0 || n1 == n as f64 {
        return Err(config("propensity fit needs both domains present"));
    }
    let nf = n as f64;

    let mut alpha = vec![0.0; n];
    let mut b = logit(n1 / nf);
    let mut obj = objective(gram, &z, &alpha, b, reg);
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..MAX_NEWTON {
        let f = scores(gram, &alpha, b);
        let p: Vec<f64> = f.iter().map(|&x| sigmoid(x)).collect();
        let resid: Vec<f64> = p.iter().zip(&z).map(|(pi, zi)| pi - zi).collect();
        let g_alpha: f64 = resid
            .iter()
            .zip(&alpha)
            .map(|(r, a)| {
                let g = r / nf + 2.0 * reg * a;
                g * g
            })
            .sum();
        let g_b = resid.iter().sum::<f64>() / nf;
        if (g_alpha + g_b * g_b).sqrt() <= GRAD_TOL {
            converged = true;
            iterations = it;
            break;
        }
        iterations = it + 1;

        // IRLS step: (L + 2 reg n W^-1) alpha' = t - b' 1 with 1' alpha' = 0,
        // t = f - W^-1 (p - z).
        let w: Vec<f64> = p.iter().map(|pi| (pi * (1.0 - pi)).max(MIN_WEIGHT)).collect();
        let mut m = gram.to_owned();
        for i in 0..n {
            m[(i, i)] += 2.0 * reg * nf / w[i];
        }
        let llt = shifted_llt(m, 0.0)?;
        let rhs = Mat::from_fn(n, 2, |i, j| if j == 0 { f[i] - resid[i] / w[i] } else { 1.0 });
        let sol = faer::linalg::solvers::Solve::solve(&llt, rhs.as_ref());
        let (s_t, s_1): (f64, f64) = (0..n).fold((0.0, 0.0), |(a, c), i| (a + sol[(i, 0)], c + sol[(i, 1)]));
        let b_new = s_t / s_1;
        let alpha_new: Vec<f64> = (0..n).map(|i| sol[(i, 0)] - b_new * sol[(i, 1)]).collect();

        // backtracking on the objective
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = alpha.iter().zip(&alpha_new).map(|(a, an)| a + step * (an - a)).collect();
            let cb = b + step * (b_new - b);
            let cobj = objective(gram, &z, &cand, cb, reg);
            if cobj.is_finite() && cobj <= obj {
                alpha = cand;
                b = cb;
                obj = cobj;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // no descent available at working precision
            break;
        }
    }

    Ok(PropensityModel {
        train_contexts: contexts.to_owned(),
        coefficients: alpha,
        intercept: b,
        context_kernel: l_spec,
        regularization: reg,
        converged,
        iterations,
    })
}

impl PropensityModel {
    /// Model with explicit coefficients, mainly for tests and FFI round trips.
    pub fn from_parts(
        train_contexts: Mat<f64>,
        coefficients: Vec<f64>,
        intercept: f64,
        context_kernel: KernelSpec,
        regularization: f64,
    ) -> Result<Self> {
        if coefficients.len() != train_contexts.nrows() {
            return Err(config("one coefficient per training context is required"));
        }
        Ok(Self {
            train_contexts,
            coefficients,
            intercept,
            context_kernel,
            regularization,
            converged: true,
            iterations: 0,
        })
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn regularization(&self) -> f64 {
        self.regularization
    }

    pub fn context_kernel(&self) -> KernelSpec {
        self.context_kernel
    }

    pub fn train_contexts(&self) -> MatRef<'_, f64> {
        self.train_contexts.as_ref()
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Estimated `P(Z = 1 | C = c)` for each row of `contexts`.
    pub fn predict(&self, contexts: MatRef<'_, f64>) -> Result<Vec<f64>> {
        if contexts.ncols() != self.train_contexts.ncols() {
            return Err(config(format!(
                "propensity model expects {} context columns, got {}",
                self.train_contexts.ncols(),
                contexts.ncols()
            )));
        }
        let cross = rbf_gram(contexts, self.train_contexts.as_ref(), self.context_kernel)?.into_inner();
        Ok(self.predict_from_cross_gram(cross.as_ref()))
    }

    /// Predictions given `l(query_i, train_j)` directly.
    pub(crate) fn predict_from_cross_gram(&self, cross: MatRef<'_, f64>) -> Vec<f64> {
        scores(cross, &self.coefficients, self.intercept)
            .into_iter()
            .map(|f| sigmoid(f).clamp(PROB_EPS, 1.0 - PROB_EPS))
            .collect()
    }
}

/// Training objective of coefficients `(alpha, b)` on `(contexts, domains)`.
pub fn propensity_objective(
    contexts: MatRef<'_, f64>,
    domains: &[Domain],
    alpha: &[f64],
    intercept: f64,
    reg: f64,
    l_spec: KernelSpec,
) -> Result<f64> {
    if alpha.len() != contexts.nrows() || domains.len() != contexts.nrows() {
        return Err(config("objective inputs have inconsistent lengths"));
    }
    let gram = rbf_gram(contexts, contexts, l_spec)?.into_inner();
    let z: Vec<f64> = domains.iter().map(|d| d.bit() as f64).collect();
    Ok(objective(gram.as_ref(), &z, alpha, intercept, reg))
}

/// Independent Bernoulli(`probs[i]`) domain draws, redrawn from the same
/// stream until both domains hold at least two rows.
///
/// Returns the labels and the number of rejected draws.
pub fn reassign_from_probabilities<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Result<(Vec<Domain>, usize)> {
    for attempt in 0..=MAX_REDRAWS {
        let z: Vec<Domain> = probs
            .iter()
            .map(|&p| if rng.random::<f64>() < p { Domain::Deployment } else { Domain::Reference })
            .collect();
        let n1 = z.iter().filter(|d| **d == Domain::Deployment).count();
        if n1 >= MIN_PER_DOMAIN && z.len() - n1 >= MIN_PER_DOMAIN {
            return Ok((z, attempt));
        }
    }
    Err(Error::DegeneratePropensity { attempts: MAX_REDRAWS + 1 })
}

/// Rosenbaum conditional reassignment: `z'_i ~ Bernoulli(e(c_i))`.
pub fn conditional_reassign<R: Rng + ?Sized>(
    model: &PropensityModel,
    contexts: MatRef<'_, f64>,
    rng: &mut R,
) -> Result<Vec<Domain>> {
    let probs = model.predict(contexts)?;
    Ok(reassign_from_probabilities(&probs, rng)?.0)
}
