//! Brute-force reference implementations shared by integration tests and the
//! acceptance suite. Deliberately naive: explicit loops, Gauss-Jordan
//! inversion, no shared code with the library's Cholesky route.

#![allow(dead_code)]

use ctxdrift::faer::Mat;
use ctxdrift::rng::stream;
use ctxdrift::{Domain, HoldoutSplit, KernelSpec, SampleBatch};
use rand::Rng;

pub fn rbf(x: &[f64], y: &[f64], bw: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d2 / (2.0 * bw * bw)).exp()
}

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn invert(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs())).unwrap();
        m.swap(col, piv);
        let p = m[col][col];
        for v in m[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for c in 0..2 * n {
                        m[r][c] -= f * m[col][c];
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// Embedding weights `(L + n lambda I)^{-1} l(c)` for one query context.
pub fn cme_weights(contexts: &[Vec<f64>], lambda: f64, l_bw: f64, query: &[f64]) -> Vec<f64> {
    let n = contexts.len();
    let reg: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| rbf(&contexts[i], &contexts[j], l_bw) + if i == j { n as f64 * lambda } else { 0.0 })
                .collect()
        })
        .collect();
    let inv = invert(&reg);
    let l: Vec<f64> = contexts.iter().map(|c| rbf(c, query, l_bw)).collect();
    (0..n).map(|i| (0..n).map(|j| inv[i][j] * l[j]).sum()).collect()
}

/// `|sum_i a_i k(s_i, .) - sum_j b_j k(t_j, .)|^2` by explicit double sums.
pub fn rkhs_gap(a: &[f64], s: &[Vec<f64>], b: &[f64], t: &[Vec<f64>], k_bw: f64) -> f64 {
    let mut v = 0.0;
    for i in 0..s.len() {
        for j in 0..s.len() {
            v += a[i] * a[j] * rbf(&s[i], &s[j], k_bw);
        }
    }
    for i in 0..t.len() {
        for j in 0..t.len() {
            v += b[i] * b[j] * rbf(&t[i], &t[j], k_bw);
        }
    }
    for i in 0..s.len() {
        for j in 0..t.len() {
            v -= 2.0 * a[i] * b[j] * rbf(&s[i], &t[j], k_bw);
        }
    }
    v
}

/// One domain's sample as row vectors.
#[derive(Clone, Debug)]
pub struct Sample {
    pub stats: Vec<Vec<f64>>,
    pub ctx: Vec<Vec<f64>>,
}

/// Raw CoDiTE at `query` for fits on `r` (lambda0) and `d` (lambda1).
pub fn codite(r: &Sample, d: &Sample, query: &[f64], lambda0: f64, lambda1: f64, k_bw: f64, l_bw: f64) -> f64 {
    let a0 = cme_weights(&r.ctx, lambda0, l_bw, query);
    let a1 = cme_weights(&d.ctx, lambda1, l_bw, query);
    rkhs_gap(&a0, &r.stats, &a1, &d.stats, k_bw)
}

/// ADiTT: mean over holdout contexts of CoDiTE clamped at zero.
pub fn aditt(r: &Sample, cond: &Sample, holdout_ctx: &[Vec<f64>], lambda0: f64, lambda1: f64, k_bw: f64, l_bw: f64) -> f64 {
    holdout_ctx
        .iter()
        .map(|c| codite(r, cond, c, lambda0, lambda1, k_bw, l_bw).max(0.0))
        .sum::<f64>()
        / holdout_ctx.len() as f64
}

/// Biased MMD^2 by explicit sums.
pub fn mmd2(x: &[Vec<f64>], y: &[Vec<f64>], bw: f64) -> f64 {
    let a = vec![1.0 / x.len() as f64; x.len()];
    let b = vec![1.0 / y.len() as f64; y.len()];
    rkhs_gap(&a, x, &b, y, bw)
}

/// Relative error with an absolute floor for values near zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

/// Step-ROC area by sweeping every threshold in the pooled p-values.
pub fn auc_by_threshold_sweep(null: &[f64], drift: &[f64]) -> f64 {
    let mut th: Vec<f64> = null.iter().chain(drift).copied().collect();
    th.push(-1.0);
    th.sort_by(f64::total_cmp);
    th.dedup();
    let pts: Vec<(f64, f64)> = th
        .iter()
        .map(|&a| {
            let fpr = null.iter().filter(|&&p| p <= a).count() as f64 / null.len() as f64;
            let tpr = drift.iter().filter(|&&p| p <= a).count() as f64 / drift.len() as f64;
            (fpr, tpr)
        })
        .collect();
    // trapezoids between consecutive thresholds equal the tie-half-credit area
    pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum()
}

/// Random instance with n0, n1 <= 10: the library-side batch and split next to
/// the same rows as plain vectors for the oracles.
pub struct Instance {
    pub batch: SampleBatch,
    pub split: HoldoutSplit,
    pub reference: Sample,
    pub conditioning: Sample,
    pub holdout_ctx: Vec<Vec<f64>>,
    pub lambda0: f64,
    pub lambda1: f64,
    pub k_bw: f64,
    pub l_bw: f64,
}

pub fn instance(seed: u64) -> Instance {
    let mut rng = stream(seed);
    let d = rng.random_range(1..=3usize);
    let q = rng.random_range(1..=2usize);
    let n0 = rng.random_range(2..=10usize);
    let n1 = rng.random_range(2..=10usize);
    let n = n0 + n1;
    let stats: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let ctx: Vec<Vec<f64>> = (0..n).map(|_| (0..q).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let grid = [1e-3, 1e-2, 1e-1];
    let lambda0 = grid[rng.random_range(0..3)];
    let lambda1 = grid[rng.random_range(0..3)];
    let k_bw = rng.random_range(0.5..2.0);
    let l_bw = rng.random_range(0.5..2.0);

    let mut domains = vec![Domain::Reference; n0];
    domains.extend(vec![Domain::Deployment; n1]);
    let batch = SampleBatch::new(
        Mat::from_fn(n, d, |i, j| stats[i][j]),
        Mat::from_fn(n, q, |i, j| ctx[i][j]),
        domains,
    )
    .unwrap();
    let h = rng.random_range(1..n1);
    let holdout: Vec<usize> = (n0..n0 + h).collect();
    let cond: Vec<usize> = (n0 + h..n).collect();
    let pick = |rows: &[usize]| Sample {
        stats: rows.iter().map(|&i| stats[i].clone()).collect(),
        ctx: rows.iter().map(|&i| ctx[i].clone()).collect(),
    };
    Instance {
        reference: pick(&(0..n0).collect::<Vec<_>>()),
        conditioning: pick(&cond),
        holdout_ctx: holdout.iter().map(|&i| ctx[i].clone()).collect(),
        split: HoldoutSplit::new(cond, holdout).unwrap(),
        batch,
        lambda0,
        lambda1,
        k_bw,
        l_bw,
    }
}

pub fn specs(inst: &Instance) -> (KernelSpec, KernelSpec) {
    (KernelSpec::new(inst.k_bw).unwrap(), KernelSpec::new(inst.l_bw).unwrap())
}
