//! Synthetic scenarios, calibration and power metrics, and a multi-run
//! experiment driver.

use std::io::Write;

use faer::Mat;
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aditt::{Domain, SampleBatch};
use crate::context::{fit_gmm_em, gmm_posterior, GmmConfig, GmmModel};
use crate::error::{config, Error, Result};
use crate::permutation::{detect, DetectorConfig};
use crate::rng::{derive_seed, substream};

/// Synthetic data family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// Scalar context that drifts over time; `s = c + noise`.
    TimeContext,
    /// Two-component 2D mixture with GMM membership probability as context.
    Subpopulation,
}

impl std::str::FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "time" | "time-context" => Ok(Scenario::TimeContext),
            "subpopulation" | "subpop" | "blobs" => Ok(Scenario::Subpopulation),
            other => Err(config(format!("unknown scenario '{other}'"))),
        }
    }
}

/// Standard deviation of each deployment context mode in the mixture variant.
pub const MODE_STD: f64 = 0.2;

/// Settings of one synthetic data draw.
///
/// For the time-context scenario exactly one of `sigma` (deployment contexts
/// `N(0, sigma^2)`) and `k_modes` (mixture of `k_modes` narrow modes) is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub n0: usize,
    pub n1: usize,
    pub sigma: Option<f64>,
    pub k_modes: Option<usize>,
    /// Mean shift of the drifted mode, in standard deviations.
    pub epsilon: f64,
    /// Scale factor of the drifted mode.
    pub omega: f64,
    pub drift_on: bool,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::TimeContext,
            n0: 256,
            n1: 256,
            sigma: Some(0.5),
            k_modes: None,
            epsilon: 0.0,
            omega: 1.0,
            drift_on: false,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn time_narrowing(n: usize, sigma: f64) -> Self {
        Self { n0: n, n1: n, sigma: Some(sigma), k_modes: None, ..Default::default() }
    }

    pub fn time_modes(n: usize, k: usize) -> Self {
        Self { n0: n, n1: n, sigma: None, k_modes: Some(k), ..Default::default() }
    }

    pub fn subpopulation(n: usize) -> Self {
        Self { scenario: Scenario::Subpopulation, n0: n, n1: n, sigma: None, k_modes: None, ..Default::default() }
    }

    /// Drifted variant with mean shift `epsilon` and scale `omega`.
    pub fn with_drift(mut self, epsilon: f64, omega: f64) -> Self {
        self.epsilon = epsilon;
        self.omega = omega;
        self.drift_on = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n0 < 4 || self.n1 < 4 {
            return Err(config("scenarios need at least 4 rows per domain"));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) || !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(config("epsilon must be >= 0 and omega > 0"));
        }
        if self.scenario == Scenario::TimeContext {
            match (self.sigma, self.k_modes) {
                (Some(s), None) if s > 0.0 && s.is_finite() => {}
                (None, Some(k)) if k >= 1 => {}
                _ => return Err(config("time-context scenario needs exactly one of sigma > 0 or k_modes >= 1")),
            }
        }
        Ok(())
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Time-context scenario: reference `C ~ N(0,1)`, `S = C + N(0,1)`;
/// deployment contexts narrowed or multimodal. With drift on, rows of one
/// uniformly chosen deployment mode follow `S ~ N(C + epsilon, omega^2)`.
pub fn gen_time_context<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<SampleBatch> {
    cfg.validate()?;
    if cfg.scenario != Scenario::TimeContext {
        return Err(config("gen_time_context needs the time-context scenario"));
    }
    let (n0, n1) = (cfg.n0, cfg.n1);
    let mut s = Mat::<f64>::zeros(n0 + n1, 1);
    let mut c = Mat::<f64>::zeros(n0 + n1, 1);
    for i in 0..n0 {
        c[(i, 0)] = normal(rng);
        s[(i, 0)] = c[(i, 0)] + normal(rng);
    }
    let (centres, scale): (Vec<f64>, f64) = match (cfg.sigma, cfg.k_modes) {
        (Some(sigma), _) => (vec![0.0], sigma),
        (None, Some(k)) => ((0..k).map(|_| normal(rng)).collect(), MODE_STD),
        _ => unreachable!("validated"),
    };
    let drifted = rng.random_range(0..centres.len());
    for i in n0..n0 + n1 {
        let mode = rng.random_range(0..centres.len());
        let ci = centres[mode] + scale * normal(rng);
        c[(i, 0)] = ci;
        s[(i, 0)] = if cfg.drift_on && mode == drifted {
            ci + cfg.epsilon + cfg.omega * normal(rng)
        } else {
            ci + normal(rng)
        };
    }
    let mut domains = vec![Domain::Reference; n0];
    domains.extend(vec![Domain::Deployment; n1]);
    SampleBatch::new(s, c, domains)
}

/// One draw of the subpopulation scenario, with the mixture used for context.
#[derive(Debug, Clone)]
pub struct SubpopulationDraw {
    pub batch: SampleBatch,
    pub gmm: GmmModel,
    /// True component of each batch row.
    pub components: Vec<usize>,
}

/// Subpopulation scenario: 2D two-component isotropic mixture with means
/// `N(0, I)`, variances `InvGamma(3, 1)`, reference prevalence `Beta(2,2)`
/// and deployment prevalence `Beta(1,1)`. Drift shifts one component's
/// deployment mean by `epsilon` of its standard deviations in a random
/// direction and scales its standard deviation by `omega`.
///
/// A further `ceil(n0 / 3)` reference rows (25% of all reference data) are
/// drawn to fit a 2-component mixture; context is the posterior probability
/// of its first component.
pub fn gen_subpopulation<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<SubpopulationDraw> {
    cfg.validate()?;
    if cfg.scenario != Scenario::Subpopulation {
        return Err(config("gen_subpopulation needs the subpopulation scenario"));
    }
    let inv_gamma = Gamma::<f64>::new(3.0, 1.0).expect("valid gamma");
    let mu: Vec<[f64; 2]> = (0..2).map(|_| [normal(rng), normal(rng)]).collect();
    let sd: Vec<f64> = (0..2).map(|_| (1.0 / inv_gamma.sample(rng)).sqrt()).collect();
    let pi_ref: f64 = Beta::new(2.0, 2.0).expect("valid beta").sample(rng);
    let pi_dep: f64 = Beta::new(1.0, 1.0).expect("valid beta").sample(rng);
    let drifted = rng.random_range(0..2usize);
    let angle = rng.random::<f64>() * std::f64::consts::TAU;
    let dir = [angle.cos(), angle.sin()];

    let n_fit = cfg.n0.div_ceil(3);
    let draw = |rng: &mut R, n: usize, pi0: f64, drift: bool| -> (Vec<[f64; 2]>, Vec<usize>) {
        (0..n)
            .map(|_| {
                let k = if rng.random::<f64>() < pi0 { 0 } else { 1 };
                let (mut m, mut s) = (mu[k], sd[k]);
                if drift && k == drifted {
                    m = [m[0] + cfg.epsilon * sd[k] * dir[0], m[1] + cfg.epsilon * sd[k] * dir[1]];
                    s *= cfg.omega;
                }
                ([m[0] + s * normal(rng), m[1] + s * normal(rng)], k)
            })
            .unzip()
    };
    let (fit_rows, _) = draw(rng, n_fit, pi_ref, false);
    let (ref_rows, ref_k) = draw(rng, cfg.n0, pi_ref, false);
    let (dep_rows, dep_k) = draw(rng, cfg.n1, pi_dep, cfg.drift_on);

    let fit = Mat::from_fn(n_fit, 2, |i, j| fit_rows[i][j]);
    let gmm = fit_gmm_em(fit.as_ref(), &GmmConfig::default(), rng)?;
    let rows: Vec<[f64; 2]> = ref_rows.into_iter().chain(dep_rows).collect();
    let s = Mat::from_fn(rows.len(), 2, |i, j| rows[i][j]);
    let post = gmm_posterior(&gmm, s.as_ref())?;
    let c = Mat::from_fn(rows.len(), 1, |i, _| post[(i, 0)]);
    let mut domains = vec![Domain::Reference; cfg.n0];
    domains.extend(vec![Domain::Deployment; cfg.n1]);
    let components = ref_k.into_iter().chain(dep_k).collect();
    Ok(SubpopulationDraw { batch: SampleBatch::new(s, c, domains)?, gmm, components })
}

/// Draw a batch for either scenario.
pub fn generate<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<SampleBatch> {
    match cfg.scenario {
        Scenario::TimeContext => gen_time_context(cfg, rng),
        Scenario::Subpopulation => Ok(gen_subpopulation(cfg, rng)?.batch),
    }
}

/// Kolmogorov-Smirnov distance between the empirical CDF of `p_values` and U[0,1].
pub fn ks_to_uniform(p_values: &[f64]) -> Result<f64> {
    if p_values.is_empty() {
        return Err(config("KS distance needs at least one p-value"));
    }
    if p_values.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(config("p-values must lie in [0, 1]"));
    }
    let mut p = p_values.to_vec();
    p.sort_by(f64::total_cmp);
    let n = p.len() as f64;
    Ok(p.iter()
        .enumerate()
        .map(|(i, &x)| ((i + 1) as f64 / n - x).abs().max((x - i as f64 / n).abs()))
        .fold(0.0, f64::max))
}

/// ROC AUC separating drift from null p-values: `P(p_drift < p_null) + P(tie) / 2`.
pub fn pvalue_auc(null_p: &[f64], drift_p: &[f64]) -> Result<f64> {
    if null_p.is_empty() || drift_p.is_empty() {
        return Err(config("AUC needs null and drift p-values"));
    }
    let mut score = 0.0;
    for &d in drift_p {
        for &n in null_p {
            score += if d < n {
                1.0
            } else if d == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(score / (null_p.len() * drift_p.len()) as f64)
}

/// Outcome of repeated detection on fresh synthetic data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub scenario: ScenarioConfig,
    pub detector: DetectorConfig,
    pub runs: usize,
    pub p_values_null: Vec<f64>,
    pub p_values_drift: Vec<f64>,
    pub ks: f64,
    pub auc: Option<f64>,
    /// Data seed of each run.
    pub run_seeds: Vec<u64>,
    pub skipped: usize,
    pub errors: Vec<String>,
}

impl ExperimentResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub const CSV_HEADER: &'static str = "method,scenario,n0,n1,sigma,k_modes,epsilon,omega,runs,skipped,ks,auc";

    /// One table row: method x setting -> KS / AUC.
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_default();
        let s = &self.scenario;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.detector.method.name(),
            serde_json::to_value(s.scenario).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
            s.n0,
            s.n1,
            opt(s.sigma.map(|x| x.to_string())),
            opt(s.k_modes.map(|x| x.to_string())),
            if s.drift_on { s.epsilon.to_string() } else { String::new() },
            if s.drift_on { s.omega.to_string() } else { String::new() },
            self.runs,
            self.skipped,
            self.ks,
            opt(self.auc.map(|x| x.to_string())),
        )
    }

    pub fn write_csv<W: Write>(results: &[ExperimentResult], mut out: W) -> Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for r in results {
            writeln!(out, "{}", r.csv_row())?;
        }
        Ok(())
    }
}

/// Run `runs` independent repetitions. Each run draws fresh null data (and
/// drifted data when `scenario.drift_on`) from seeds derived from
/// `scenario.seed`, and detects with a run-specific detector seed.
///
/// Runs that fail are skipped and recorded; more than 10% skipped is an error.
pub fn run_experiment(scenario: &ScenarioConfig, detector: &DetectorConfig, runs: usize) -> Result<ExperimentResult> {
    scenario.validate()?;
    detector.validate()?;
    if runs < 10 {
        return Err(config(format!("experiments need at least 10 runs, got {runs}")));
    }
    let run_seeds: Vec<u64> = (0..runs as u64).map(|i| derive_seed(scenario.seed, i)).collect();
    let one = |seed: u64, drift: bool| -> Result<f64> {
        let cfg = ScenarioConfig { drift_on: drift, ..scenario.clone() };
        let batch = generate(&cfg, &mut substream(seed, drift as u64))?;
        let det = DetectorConfig { seed: derive_seed(seed, 2 + drift as u64), ..detector.clone() };
        Ok(detect(&batch, &det)?.p_value)
    };
    let outcomes: Vec<(Result<f64>, Option<Result<f64>>)> = run_seeds
        .par_iter()
        .map(|&seed| (one(seed, false), scenario.drift_on.then(|| one(seed, true))))
        .collect();

    let (mut null, mut drift, mut errors) = (Vec::new(), Vec::new(), Vec::new());
    for (i, (n, d)) in outcomes.into_iter().enumerate() {
        match n {
            Ok(p) => null.push(p),
            Err(e) => errors.push(format!("run {i} null: {e}")),
        }
        match d {
            Some(Ok(p)) => drift.push(p),
            Some(Err(e)) => errors.push(format!("run {i} drift: {e}")),
            None => {}
        }
    }
    let attempted = runs * if scenario.drift_on { 2 } else { 1 };
    if errors.len() * 10 > attempted {
        return Err(Error::Numerical(format!(
            "{} of {attempted} runs failed; first: {}",
            errors.len(),
            errors[0]
        )));
    }
    let ks = ks_to_uniform(&null)?;
    let auc = if scenario.drift_on { Some(pvalue_auc(&null, &drift)?) } else { None };
    Ok(ExperimentResult {
        scenario: scenario.clone(),
        detector: detector.clone(),
        runs,
        p_values_null: null,
        p_values_drift: drift,
        ks,
        auc,
        run_seeds,
        skipped: errors.len(),
        errors,
    })
}
