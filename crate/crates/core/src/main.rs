use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ctxdrift::cme::CvConfig;
use ctxdrift::io::{load_batch, write_report, Command, RunConfig};
use ctxdrift::permutation::Method;
use ctxdrift::{detect, run_experiment, DetectorConfig, ExperimentResult, Scenario, ScenarioConfig};

#[derive(Parser)]
#[command(name = "ctxdrift", version, about = "Drift detection conditional on context")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Test reference against deployment data from CSV files.
    Detect(DetectArgs),
    /// Null-only experiment on synthetic data; reports KS-to-uniform.
    Calibrate(ExperimentArgs),
    /// Null and drift experiment on synthetic data; reports KS and AUC.
    Power(ExperimentArgs),
}

#[derive(Args)]
struct DetectorArgs {
    /// aditt, adite, mmd or mmd-sub.
    #[arg(long, default_value = "aditt")]
    method: Method,
    #[arg(long, default_value_t = 100)]
    n_perm: usize,
    #[arg(long, default_value_t = 0.25)]
    holdout_frac: f64,
    #[arg(long, default_value_t = 1e-3)]
    lambda0: f64,
    #[arg(long, default_value_t = 1e-3)]
    lambda1: f64,
    /// Pick both regularisers by 5-fold cross-validation.
    #[arg(long)]
    tune_lambda: bool,
    /// Penalty weight of the kernel logistic propensity model.
    #[arg(long, default_value_t = 1e-5)]
    propensity_reg: f64,
    /// Use (1 + #{t_i >= t}) / (1 + n_perm) for the p-value.
    #[arg(long)]
    smoothed: bool,
    #[arg(long, env = "CTXDRIFT_SEED", default_value_t = 0)]
    seed: u64,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl DetectorArgs {
    fn config(&self) -> DetectorConfig {
        DetectorConfig {
            method: self.method,
            n_perm: self.n_perm,
            holdout_fraction: self.holdout_frac,
            lambda0: self.lambda0,
            lambda1: self.lambda1,
            tune_lambda: self.tune_lambda.then(CvConfig::default),
            propensity_reg: self.propensity_reg,
            smoothed_p_value: self.smoothed,
            seed: self.seed,
            ..Default::default()
        }
    }
}

#[derive(Args)]
struct DetectArgs {
    #[command(flatten)]
    detector: DetectorArgs,
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    deploy: PathBuf,
    /// Comma-separated statistic column names.
    #[arg(long, value_delimiter = ',', required = true)]
    stat_cols: Vec<String>,
    /// Comma-separated context column names.
    #[arg(long, value_delimiter = ',')]
    ctx_cols: Vec<String>,
    /// Exit with status 1 when the p-value is below this level.
    #[arg(long)]
    fail_on_drift: Option<f64>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    detector: DetectorArgs,
    /// time or subpopulation.
    #[arg(long, default_value = "time")]
    scenario: Scenario,
    #[arg(long, default_value_t = 100)]
    runs: usize,
    /// Rows per domain.
    #[arg(long, default_value_t = 256)]
    n: usize,
    /// Deployment context scale (time scenario).
    #[arg(long, conflicts_with = "k_modes")]
    sigma: Option<f64>,
    /// Number of deployment context modes (time scenario).
    #[arg(long)]
    k_modes: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 1.0)]
    omega: f64,
    /// Also write a one-row CSV table here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

impl ExperimentArgs {
    fn scenario(&self, drift: bool) -> ScenarioConfig {
        let (sigma, k_modes) = match (self.scenario, self.sigma, self.k_modes) {
            (Scenario::Subpopulation, _, _) => (None, None),
            (_, None, None) => (Some(0.5), None),
            (_, s, k) => (s, k),
        };
        ScenarioConfig {
            scenario: self.scenario,
            n0: self.n,
            n1: self.n,
            sigma,
            k_modes,
            epsilon: self.epsilon,
            omega: self.omega,
            drift_on: drift,
            seed: self.detector.seed,
        }
    }
}

fn emit<T: serde::Serialize>(value: &T, out: &Option<PathBuf>) -> ctxdrift::Result<()> {
    match out {
        Some(path) => write_report(value, path),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

fn run_detect(args: &DetectArgs) -> ctxdrift::Result<bool> {
    let run = RunConfig {
        command: Command::Detect,
        detector: args.detector.config(),
        ref_path: Some(args.reference.clone()),
        deploy_path: Some(args.deploy.clone()),
        stat_cols: args.stat_cols.clone(),
        ctx_cols: args.ctx_cols.clone(),
        out: args.detector.out.clone(),
    };
    run.validate()?;
    let batch = load_batch(
        &args.reference,
        &args.deploy,
        &args.stat_cols,
        &args.ctx_cols,
        run.detector.method != Method::Mmd,
    )?;
    let report = detect(&batch, &run.detector)?;
    emit(&report, &run.out)?;
    Ok(args.fail_on_drift.is_some_and(|alpha| report.p_value < alpha))
}

fn run_experiment_cmd(args: &ExperimentArgs, drift: bool) -> ctxdrift::Result<()> {
    let result = run_experiment(&args.scenario(drift), &args.detector.config(), args.runs)?;
    if let Some(path) = &args.csv {
        let mut buf = Vec::new();
        ExperimentResult::write_csv(std::slice::from_ref(&result), &mut buf)?;
        std::fs::write(path, buf)?;
    }
    emit(&result, &args.detector.out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Cmd::Detect(a) => run_detect(a),
        Cmd::Calibrate(a) => run_experiment_cmd(a, false).map(|_| false),
        Cmd::Power(a) => run_experiment_cmd(a, true).map(|_| false),
    };
    match outcome {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
