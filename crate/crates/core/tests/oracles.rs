mod common;

use common::*;
use ctxdrift::faer::Mat;
use ctxdrift::rng::stream;
use ctxdrift::*;
use rand::Rng;

#[test]
fn aditt_matches_brute_force() {
    for seed in 0..100 {
        let inst = instance(seed);
        let (k, l) = specs(&inst);
        let got = aditt_statistic(&inst.batch, &inst.split, inst.lambda0, inst.lambda1, k, l).unwrap();
        let want = aditt(&inst.reference, &inst.conditioning, &inst.holdout_ctx, inst.lambda0, inst.lambda1, inst.k_bw, inst.l_bw);
        assert!(rel_err(got, want) <= 1e-8 || (got - want).abs() <= 1e-12, "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn codite_matches_brute_force() {
    for seed in 100..150 {
        let inst = instance(seed);
        let (k, l) = specs(&inst);
        let to_mat = |rows: &[Vec<f64>]| Mat::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]);
        let r = &inst.reference;
        let c = &inst.conditioning;
        let fit0 = fit_cme(to_mat(&r.ctx).as_ref(), inst.lambda0, l, Domain::Reference).unwrap();
        let fit1 = fit_cme(to_mat(&c.ctx).as_ref(), inst.lambda1, l, Domain::Deployment).unwrap();
        let g = |a: &[Vec<f64>], b: &[Vec<f64>]| rbf_gram(to_mat(a).as_ref(), to_mat(b).as_ref(), k).unwrap();
        for query in &inst.holdout_ctx {
            let got = codite_mmd(&fit0, &fit1, &g(&r.stats, &r.stats), &g(&c.stats, &c.stats), &g(&r.stats, &c.stats), query).unwrap();
            let want = codite(r, c, query, inst.lambda0, inst.lambda1, inst.k_bw, inst.l_bw);
            assert!((got - want).abs() <= 1e-8 * want.abs().max(1e-4), "seed {seed}: {got} vs {want}");
        }
    }
}

#[test]
fn weight_matrix_form_equals_mean_raw_codite() {
    for seed in 200..250 {
        let inst = instance(seed);
        let (k, l) = specs(&inst);
        let w = weight_matrices(&inst.batch, &inst.split, inst.lambda0, inst.lambda1, l).unwrap();
        let to_mat = |rows: &[Vec<f64>]| Mat::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]);
        let (r, c) = (&inst.reference, &inst.conditioning);
        let g = |a: &[Vec<f64>], b: &[Vec<f64>]| rbf_gram(to_mat(a).as_ref(), to_mat(b).as_ref(), k).unwrap();
        let got = w.inner_product_statistic(&g(&r.stats, &r.stats), &g(&c.stats, &c.stats), &g(&r.stats, &c.stats)).unwrap();
        let want = inst
            .holdout_ctx
            .iter()
            .map(|q| codite(r, c, q, inst.lambda0, inst.lambda1, inst.k_bw, inst.l_bw))
            .sum::<f64>()
            / inst.holdout_ctx.len() as f64;
        assert!((got - want).abs() <= 1e-8 * want.abs().max(1e-4), "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn mmd_matches_triple_loop() {
    for seed in 300..340 {
        let inst = instance(seed);
        let r = &inst.reference.stats;
        let d = &inst.conditioning.stats;
        let to_mat = |rows: &[Vec<f64>]| Mat::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]);
        let got = mmd_squared_biased(to_mat(r).as_ref(), to_mat(d).as_ref(), KernelSpec::new(inst.k_bw).unwrap()).unwrap();
        let want = mmd2(r, d, inst.k_bw).max(0.0);
        assert!((got - want).abs() <= 1e-12, "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn holdout_error_matches_rkhs_norm() {
    for seed in 400..430 {
        let inst = instance(seed);
        let (k, l) = specs(&inst);
        let r = &inst.reference;
        let out = &inst.conditioning;
        let to_mat = |rows: &[Vec<f64>]| Mat::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]);
        let fit = fit_cme(to_mat(&r.ctx).as_ref(), inst.lambda0, l, Domain::Reference).unwrap();
        let g = |a: &[Vec<f64>], b: &[Vec<f64>], s| rbf_gram(to_mat(a).as_ref(), to_mat(b).as_ref(), s).unwrap();
        let diag = vec![1.0; out.stats.len()];
        let got = cme_holdout_error(&fit, &g(&r.stats, &r.stats, k), &g(&r.stats, &out.stats, k), &diag, &g(&r.ctx, &out.ctx, l)).unwrap();
        for (m, e) in got.iter().enumerate() {
            let a = cme_weights(&r.ctx, inst.lambda0, inst.l_bw, &out.ctx[m]);
            let want = rkhs_gap(&a, &r.stats, &[1.0], &out.stats[m..=m], inst.k_bw);
            assert!((e - want).abs() <= 1e-8 * want.abs().max(1e-4), "seed {seed}: {e} vs {want}");
        }
    }
}

#[test]
fn auc_matches_threshold_sweep() {
    for seed in 0..50u64 {
        let mut rng = stream(seed);
        let levels = [0.0, 0.01, 0.1, 0.5, 0.9, 1.0];
        let null: Vec<f64> = (0..rng.random_range(1..30)).map(|_| levels[rng.random_range(0..6)]).collect();
        let drift: Vec<f64> = (0..rng.random_range(1..30)).map(|_| levels[rng.random_range(0..4)]).collect();
        let got = pvalue_auc(&null, &drift).unwrap();
        let want = auc_by_threshold_sweep(&null, &drift);
        assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
    }
}

#[test]
fn kde_integrates_to_one() {
    let pts = Mat::from_fn(12, 1, |i, _| ((i * 7) % 5) as f64 * 0.4 - 1.0);
    let m = kde_fit(pts.as_ref()).unwrap();
    let (lo, hi, steps) = (-12.0, 12.0, 24_000);
    let h = (hi - lo) / steps as f64;
    let grid = Mat::from_fn(steps + 1, 1, |i, _| lo + h * i as f64);
    let dens: Vec<f64> = m.log_density(grid.as_ref()).unwrap().into_iter().map(f64::exp).collect();
    let integral: f64 = dens.windows(2).map(|w| (w[0] + w[1]) * h / 2.0).sum();
    assert!((integral - 1.0).abs() < 1e-3, "{integral}");
}
