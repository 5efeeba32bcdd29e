//! The ADiTT statistic: CoDiTE estimates averaged over held-out deployment
//! contexts, and its equivalent weight-matrix form.

use std::io::Write;

use faer::{Mat, MatRef};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cme::{codite_from_weights, CmeFit};
use crate::error::{config, Result};
use crate::kernel::{rbf_gram, GramMatrix, KernelSpec};
use crate::linalg::{gather, gather_rows};

/// Which sample a row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Reference = 0,
    Deployment = 1,
}

impl Domain {
    pub fn from_bit(z: u8) -> Result<Self> {
        match z {
            0 => Ok(Domain::Reference),
            1 => Ok(Domain::Deployment),
            other => Err(config(format!("domain label must be 0 or 1, got {other}"))),
        }
    }

    pub fn bit(self) -> u8 {
        self as u8
    }

    pub fn flipped(self) -> Self {
        match self {
            Domain::Reference => Domain::Deployment,
            Domain::Deployment => Domain::Reference,
        }
    }
}

/// Paired statistics and contexts with domain labels.
#[derive(Debug, Clone)]
pub struct SampleBatch {
    statistics: Mat<f64>,
    contexts: Mat<f64>,
    domains: Vec<Domain>,
}

impl SampleBatch {
    /// Validates shapes, finiteness and that each domain has at least two rows.
    ///
    /// `contexts` may have zero columns; context-conditional detectors reject such
    /// batches, plain MMD accepts them.
    pub fn new(statistics: Mat<f64>, contexts: Mat<f64>, domains: Vec<Domain>) -> Result<Self> {
        let n = statistics.nrows();
        if contexts.nrows() != n || domains.len() != n {
            return Err(config(format!(
                "row counts differ: statistics {n}, contexts {}, domains {}",
                contexts.nrows(),
                domains.len()
            )));
        }
        if statistics.ncols() == 0 {
            return Err(config("statistics need at least one column"));
        }
        let finite = |m: &Mat<f64>| (0..m.ncols()).all(|j| (0..m.nrows()).all(|i| m[(i, j)].is_finite()));
        if !finite(&statistics) || !finite(&contexts) {
            return Err(config("batch contains missing or non-finite values"));
        }
        let n1 = domains.iter().filter(|d| **d == Domain::Deployment).count();
        if n1 < 2 || n - n1 < 2 {
            return Err(config(format!(
                "each domain needs at least 2 samples (reference {}, deployment {n1})",
                n - n1
            )));
        }
        Ok(Self { statistics, contexts, domains })
    }

    /// Stack reference rows on top of deployment rows.
    pub fn from_domains(
        ref_statistics: MatRef<'_, f64>,
        ref_contexts: MatRef<'_, f64>,
        dep_statistics: MatRef<'_, f64>,
        dep_contexts: MatRef<'_, f64>,
    ) -> Result<Self> {
        let (n0, n1) = (ref_statistics.nrows(), dep_statistics.nrows());
        if ref_statistics.ncols() != dep_statistics.ncols() || ref_contexts.ncols() != dep_contexts.ncols() {
            return Err(config("reference and deployment column counts differ"));
        }
        let stack = |a: MatRef<'_, f64>, b: MatRef<'_, f64>| {
            Mat::from_fn(a.nrows() + b.nrows(), a.ncols(), |i, j| if i < a.nrows() { a[(i, j)] } else { b[(i - a.nrows(), j)] })
        };
        let mut domains = vec![Domain::Reference; n0];
        domains.extend(std::iter::repeat_n(Domain::Deployment, n1));
        Self::new(stack(ref_statistics, dep_statistics), stack(ref_contexts, dep_contexts), domains)
    }

    pub fn len(&self) -> usize {
        self.domains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domains.is_empty()
    }

    pub fn statistics(&self) -> MatRef<'_, f64> {
        self.statistics.as_ref()
    }

    pub fn contexts(&self) -> MatRef<'_, f64> {
        self.contexts.as_ref()
    }

    pub fn domains(&self) -> &[Domain] {
        &self.domains
    }

    pub fn context_dim(&self) -> usize {
        self.contexts.ncols()
    }

    pub fn indices_of(&self, domain: Domain) -> Vec<usize> {
        rows_of(&self.domains, domain)
    }

    pub fn n_reference(&self) -> usize {
        self.domains.iter().filter(|d| **d == Domain::Reference).count()
    }

    pub fn n_deployment(&self) -> usize {
        self.len() - self.n_reference()
    }

    pub(crate) fn require_context(&self) -> Result<()> {
        if self.contexts.ncols() == 0 {
            return Err(config("this detector needs at least one context column"));
        }
        Ok(())
    }
}

pub(crate) fn rows_of(domains: &[Domain], domain: Domain) -> Vec<usize> {
    domains.iter().enumerate().filter(|(_, d)| **d == domain).map(|(i, _)| i).collect()
}

/// Partition of rows into contexts held out to be conditioned on and rows
/// used to fit the deployment-side embedding. Indices are batch row indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HoldoutSplit {
    conditioning: Vec<usize>,
    holdout: Vec<usize>,
}

impl HoldoutSplit {
    pub fn new(mut conditioning: Vec<usize>, mut holdout: Vec<usize>) -> Result<Self> {
        if holdout.is_empty() || conditioning.is_empty() {
            return Err(config("holdout split needs at least one holdout and one conditioning row"));
        }
        conditioning.sort_unstable();
        holdout.sort_unstable();
        if conditioning.iter().any(|i| holdout.binary_search(i).is_ok()) {
            return Err(config("holdout and conditioning rows overlap"));
        }
        Ok(Self { conditioning, holdout })
    }

    pub fn conditioning(&self) -> &[usize] {
        &self.conditioning
    }

    pub fn holdout(&self) -> &[usize] {
        &self.holdout
    }
}

/// Number of rows held out: `ceil(fraction * n)`.
pub fn holdout_count(n: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(config(format!("holdout fraction must lie in (0, 1), got {fraction}")));
    }
    let h = (fraction * n as f64 - 1e-9).ceil().max(1.0) as usize;
    if n < 2 || h >= n {
        return Err(config(format!(
            "cannot hold out {h} of {n} rows and keep at least one to condition on"
        )));
    }
    Ok(h)
}

pub(crate) fn split_rows<R: Rng + ?Sized>(rows: &[usize], fraction: f64, rng: &mut R) -> Result<HoldoutSplit> {
    let h = holdout_count(rows.len(), fraction)?;
    let mut shuffled = rows.to_vec();
    shuffled.shuffle(rng);
    let conditioning = shuffled.split_off(h);
    HoldoutSplit::new(conditioning, shuffled)
}

/// Uniformly random holdout of `ceil(fraction * n1)` deployment rows.
pub fn split_holdout<R: Rng + ?Sized>(batch: &SampleBatch, fraction: f64, rng: &mut R) -> Result<HoldoutSplit> {
    split_rows(&batch.indices_of(Domain::Deployment), fraction, rng)
}

/// Holdout drawn from all rows of both domains (the ADiTE ablation).
pub fn split_pooled_holdout<R: Rng + ?Sized>(batch: &SampleBatch, fraction: f64, rng: &mut R) -> Result<HoldoutSplit> {
    let all: Vec<usize> = (0..batch.len()).collect();
    let split = split_rows(&all, fraction, rng)?;
    let fitted = |d: Domain| split.conditioning.iter().filter(|&&i| batch.domains[i] == d).count();
    if fitted(Domain::Reference) == 0 || fitted(Domain::Deployment) == 0 {
        return Err(config("pooled holdout left one domain without fitting rows"));
    }
    Ok(split)
}

/// Statistic and context Gram matrices over every row of a batch, computed
/// once and sliced for each statistic evaluation.
#[derive(Debug, Clone)]
pub struct KernelPool {
    k: Mat<f64>,
    l: Mat<f64>,
    contexts: Mat<f64>,
    k_spec: KernelSpec,
    l_spec: KernelSpec,
}

/// Per-holdout-context pieces of one statistic evaluation.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub reference_rows: Vec<usize>,
    pub deployment_rows: Vec<usize>,
    pub holdout_rows: Vec<usize>,
    /// Raw CoDiTE value at each holdout context.
    pub codite: Vec<f64>,
    /// Embedding weights, reference side (n_ref x n_holdout).
    pub weights0: Mat<f64>,
    /// Embedding weights, deployment side (n_dep x n_holdout).
    pub weights1: Mat<f64>,
}

impl Evaluation {
    /// Mean of the CoDiTE values clamped at zero.
    pub fn statistic(&self) -> f64 {
        self.codite.iter().map(|u| u.max(0.0)).sum::<f64>() / self.codite.len() as f64
    }
}

impl KernelPool {
    pub fn new(batch: &SampleBatch, k_spec: KernelSpec, l_spec: KernelSpec) -> Result<Self> {
        batch.require_context()?;
        let k = rbf_gram(batch.statistics(), batch.statistics(), k_spec)?.into_inner();
        let l = rbf_gram(batch.contexts(), batch.contexts(), l_spec)?.into_inner();
        Ok(Self { k, l, contexts: batch.contexts.clone(), k_spec, l_spec })
    }

    pub fn k_spec(&self) -> KernelSpec {
        self.k_spec
    }

    pub fn l_spec(&self) -> KernelSpec {
        self.l_spec
    }

    pub fn context_gram(&self) -> MatRef<'_, f64> {
        self.l.as_ref()
    }

    pub fn statistic_gram(&self) -> MatRef<'_, f64> {
        self.k.as_ref()
    }

    /// CoDiTE at each holdout row, with embeddings fitted on `reference_rows`
    /// (regulariser `lambda0`) and `deployment_rows` (`lambda1`).
    pub fn evaluate(
        &self,
        reference_rows: &[usize],
        deployment_rows: &[usize],
        holdout_rows: &[usize],
        lambda0: f64,
        lambda1: f64,
    ) -> Result<Evaluation> {
        if reference_rows.is_empty() || deployment_rows.is_empty() || holdout_rows.is_empty() {
            return Err(config("statistic needs reference, deployment and holdout rows"));
        }
        let l = self.l.as_ref();
        let fit = |rows: &[usize], lambda: f64, domain: Domain| {
            CmeFit::from_gram(gather_rows(self.contexts.as_ref(), rows), gather(l, rows, rows), lambda, self.l_spec, domain)
        };
        let fit0 = fit(reference_rows, lambda0, Domain::Reference)?;
        let fit1 = fit(deployment_rows, lambda1, Domain::Deployment)?;
        let weights0 = fit0.solve(gather(l, reference_rows, holdout_rows).as_ref());
        let weights1 = fit1.solve(gather(l, deployment_rows, holdout_rows).as_ref());
        let k = self.k.as_ref();
        let codite = codite_from_weights(
            weights0.as_ref(),
            weights1.as_ref(),
            gather(k, reference_rows, reference_rows).as_ref(),
            gather(k, deployment_rows, deployment_rows).as_ref(),
            gather(k, reference_rows, deployment_rows).as_ref(),
        );
        Ok(Evaluation {
            reference_rows: reference_rows.to_vec(),
            deployment_rows: deployment_rows.to_vec(),
            holdout_rows: holdout_rows.to_vec(),
            codite,
            weights0,
            weights1,
        })
    }

    /// ADiTT evaluation for the labelling `domains` and a split of its
    /// deployment rows.
    pub fn evaluate_aditt(&self, domains: &[Domain], split: &HoldoutSplit, lambda0: f64, lambda1: f64) -> Result<Evaluation> {
        let reference = rows_of(domains, Domain::Reference);
        self.evaluate(&reference, split.conditioning(), split.holdout(), lambda0, lambda1)
    }

    /// ADiTE evaluation: holdout rows drawn from both domains; the remaining
    /// rows of each domain fit that domain's embedding.
    pub fn evaluate_adite(&self, domains: &[Domain], split: &HoldoutSplit, lambda0: f64, lambda1: f64) -> Result<Evaluation> {
        let (mut reference, mut deployment) = (Vec::new(), Vec::new());
        for &i in split.conditioning() {
            match domains[i] {
                Domain::Reference => reference.push(i),
                Domain::Deployment => deployment.push(i),
            }
        }
        self.evaluate(&reference, &deployment, split.holdout(), lambda0, lambda1)
    }
}

fn check_aditt_split(batch: &SampleBatch, split: &HoldoutSplit) -> Result<()> {
    let all_deployment = split
        .conditioning()
        .iter()
        .chain(split.holdout())
        .all(|&i| i < batch.len() && batch.domains[i] == Domain::Deployment);
    if !all_deployment {
        return Err(config("ADiTT split must index deployment rows only"));
    }
    Ok(())
}

/// ADiTT test statistic: mean CoDiTE (clamped at 0) over the holdout contexts.
pub fn aditt_statistic(
    batch: &SampleBatch,
    split: &HoldoutSplit,
    lambda0: f64,
    lambda1: f64,
    k_spec: KernelSpec,
    l_spec: KernelSpec,
) -> Result<f64> {
    check_aditt_split(batch, split)?;
    let pool = KernelPool::new(batch, k_spec, l_spec)?;
    Ok(pool.evaluate_aditt(batch.domains(), split, lambda0, lambda1)?.statistic())
}

/// ADiTE ablation statistic: averages over held-out contexts from both domains.
pub fn adite_statistic(
    batch: &SampleBatch,
    split: &HoldoutSplit,
    lambda0: f64,
    lambda1: f64,
    k_spec: KernelSpec,
    l_spec: KernelSpec,
) -> Result<f64> {
    if split.conditioning().iter().chain(split.holdout()).any(|&i| i >= batch.len()) {
        return Err(config("split indexes rows outside the batch"));
    }
    let pool = KernelPool::new(batch, k_spec, l_spec)?;
    Ok(pool.evaluate_adite(batch.domains(), split, lambda0, lambda1)?.statistic())
}

/// Weight matrices expressing the ADiTT statistic as
/// `<K00, W00> + <K11, W11> - 2 <K01, W01>`.
///
/// The `1 / n_holdout` averaging factor is folded into the weights.
#[derive(Debug, Clone)]
pub struct WeightMatrices {
    pub w00: Mat<f64>,
    pub w11: Mat<f64>,
    pub w01: Mat<f64>,
    /// Batch rows indexing the reference axis of `w00` / rows of `w01`.
    pub reference_rows: Vec<usize>,
    /// Batch rows indexing the conditioning deployment axis of `w11` / columns of `w01`.
    pub conditioning_rows: Vec<usize>,
}

impl WeightMatrices {
    pub fn from_evaluation(eval: &Evaluation) -> Self {
        let scale = 1.0 / eval.holdout_rows.len() as f64;
        let (a0, a1) = (eval.weights0.as_ref(), eval.weights1.as_ref());
        let outer = |a: MatRef<'_, f64>, b: MatRef<'_, f64>| {
            let mut w = a * b.transpose();
            w *= faer::Scale(scale);
            w
        };
        Self {
            w00: outer(a0, a0),
            w11: outer(a1, a1),
            w01: outer(a0, a1),
            reference_rows: eval.reference_rows.clone(),
            conditioning_rows: eval.deployment_rows.clone(),
        }
    }

    /// `<K00, W00> + <K11, W11> - 2 <K01, W01>`.
    pub fn inner_product_statistic(&self, k00: &GramMatrix, k11: &GramMatrix, k01: &GramMatrix) -> Result<f64> {
        let frob = |k: &GramMatrix, w: &Mat<f64>| -> Result<f64> {
            if k.nrows() != w.nrows() || k.ncols() != w.ncols() {
                return Err(config("kernel and weight matrix shapes differ"));
            }
            let mut s = 0.0;
            for j in 0..w.ncols() {
                for i in 0..w.nrows() {
                    s += k[(i, j)] * w[(i, j)];
                }
            }
            Ok(s)
        };
        Ok(frob(k00, &self.w00)? + frob(k11, &self.w11)? - 2.0 * frob(k01, &self.w01)?)
    }

    /// Row sums of `W01` (weight given to each reference row).
    pub fn reference_marginals(&self) -> Vec<f64> {
        (0..self.w01.nrows()).map(|i| self.w01.row(i).sum()).collect()
    }

    /// Column sums of `W01` (weight given to each conditioning deployment row).
    pub fn deployment_marginals(&self) -> Vec<f64> {
        (0..self.w01.ncols()).map(|j| self.w01.col(j).sum()).collect()
    }

    /// CSV of marginal weights: `domain,row,c0..c{q-1},weight`.
    pub fn write_marginals_csv<W: Write>(&self, contexts: MatRef<'_, f64>, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["domain".to_string(), "row".to_string()];
        header.extend((0..contexts.ncols()).map(|j| format!("c{j}")));
        header.push("weight".into());
        wtr.write_record(&header).map_err(csv_err)?;
        let sides = [
            ("reference", &self.reference_rows, self.reference_marginals()),
            ("deployment", &self.conditioning_rows, self.deployment_marginals()),
        ];
        for (name, rows, weights) in sides {
            for (&row, w) in rows.iter().zip(weights) {
                let mut rec = vec![name.to_string(), row.to_string()];
                rec.extend((0..contexts.ncols()).map(|j| contexts[(row, j)].to_string()));
                rec.push(w.to_string());
                wtr.write_record(&rec).map_err(csv_err)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> crate::Error {
    crate::Error::Io(std::io::Error::other(e))
}

/// Weight matrices of the ADiTT statistic for `split`.
///
/// The statistic kernel does not enter the weights, only `l_spec`.
pub fn weight_matrices(
    batch: &SampleBatch,
    split: &HoldoutSplit,
    lambda0: f64,
    lambda1: f64,
    l_spec: KernelSpec,
) -> Result<WeightMatrices> {
    check_aditt_split(batch, split)?;
    batch.require_context()?;
    let reference = batch.indices_of(Domain::Reference);
    let contexts = batch.contexts();
    let fit = |rows: &[usize], lambda: f64, domain: Domain| {
        let c = gather_rows(contexts, rows);
        crate::cme::fit_cme(c.as_ref(), lambda, l_spec, domain)
    };
    let fit0 = fit(&reference, lambda0, Domain::Reference)?;
    let fit1 = fit(split.conditioning(), lambda1, Domain::Deployment)?;
    let queries = gather_rows(contexts, split.holdout());
    let eval = Evaluation {
        reference_rows: reference,
        deployment_rows: split.conditioning().to_vec(),
        holdout_rows: split.holdout().to_vec(),
        codite: Vec::new(),
        weights0: fit0.weights(queries.as_ref())?,
        weights1: fit1.weights(queries.as_ref())?,
    };
    Ok(WeightMatrices::from_evaluation(&eval))
}
