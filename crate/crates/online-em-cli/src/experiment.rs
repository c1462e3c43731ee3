//! Replication-study driver: paired algorithm runs over seeded replicas,
//! truth-aligned result rows, quantile summaries and metadata, all written
//! as CSV with deterministic bytes.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use online_em::estimators::{
    batch_em_run, run_online_em, run_titterington_poisson, AveragingStart,
    Retention, RunOptions,
};
use online_em::model::{blend_stats, LatentModel, StatVector, StepSchedule};
use online_em::poisson::{PoissonMixture, PoissonMixtureParams};
use online_em::regmix::{RegMixParams, RegObservation, RegressionMixture};
use online_em::simgen::{
    gen_poisson_mixture, gen_regmix_flexmix, regmix_flexmix_truth, SeededStream, GENERATOR_ID,
};
use online_em::{EstimatorError, ModelError};

use crate::config::{Algorithm, AveragingChoice, ExperimentConfig, ModelKind, RetentionChoice};
use crate::summary::{asymptotic_reference_iqr, summarize_quantiles};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

/// One result line: a replica/algorithm pair with truth-aligned parameter
/// estimates, or NaNs with the failure step when the run broke down.
#[derive(Debug, Clone)]
pub struct ReplicationRow {
    pub replica: u64,
    pub algorithm: Algorithm,
    pub data_hash: u64,
    pub failed: bool,
    pub failure_step: Option<usize>,
    pub params: Vec<f64>,
}

#[derive(Debug)]
pub struct ExperimentOutput {
    pub param_labels: Vec<String>,
    pub rows: Vec<ReplicationRow>,
    pub n_failed: usize,
}

impl ExperimentOutput {
    pub fn failure_rate(&self) -> f64 {
        if self.rows.is_empty() {
            0.0
        } else {
            self.n_failed as f64 / self.rows.len() as f64
        }
    }

    /// Column of estimates for one algorithm/parameter pair; failed rows
    /// appear as NaN.
    pub fn column(&self, algorithm: Algorithm, label: &str) -> Vec<f64> {
        let idx = self
            .param_labels
            .iter()
            .position(|l| l == label)
            .unwrap_or_else(|| panic!("unknown parameter label {label}"));
        self.rows
            .iter()
            .filter(|r| r.algorithm == algorithm)
            .map(|r| r.params[idx])
            .collect()
    }
}

/// Final and optional averaged estimate of one shared slow-schedule run,
/// or its failure message.
type SharedRun = Result<(Vec<f64>, Option<Vec<f64>>), String>;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a64(bytes: impl Iterator<Item = u8>) -> u64 {
    let mut hash = FNV_OFFSET;
    for b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

fn hash_poisson(data: &[u64]) -> u64 {
    fnv1a64(data.iter().flat_map(|y| y.to_le_bytes()))
}

fn hash_regmix(data: &[RegObservation]) -> u64 {
    fnv1a64(data.iter().flat_map(|o| {
        o.r.to_le_bytes()
            .into_iter()
            .chain(o.z.iter().flat_map(|v| v.to_le_bytes()))
    }))
}

/// All permutations of `0..m` (component counts are small).
fn permutations(m: usize) -> Vec<Vec<usize>> {
    if m == 1 {
        return vec![vec![0]];
    }
    let mut out = Vec::new();
    for sub in permutations(m - 1) {
        for pos in 0..m {
            let mut p = sub.clone();
            p.insert(pos, m - 1);
            out.push(p);
        }
    }
    out
}

/// Permutation `perm` such that estimated component `perm[k]` is reported
/// in truth slot `k`, minimising the total squared component distance.
fn best_permutation(m: usize, dist: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in permutations(m) {
        let total: f64 = (0..m).map(|slot| dist(perm[slot], slot)).sum();
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, perm));
        }
    }
    best.expect("at least one permutation").1
}

/// Reorders a flat Poisson parameter vector `[omega..., lambda...]` so that
/// components match the truth by nearest intensity.
fn align_poisson(flat: &[f64], truth: &PoissonMixtureParams) -> Vec<f64> {
    let m = truth.m();
    let perm = best_permutation(m, |est, slot| {
        let d = flat[m + est] - truth.lambda()[slot];
        d * d
    });
    let mut out = vec![0.0; 2 * m];
    for slot in 0..m {
        out[slot] = flat[perm[slot]];
        out[m + slot] = flat[m + perm[slot]];
    }
    out
}

/// Reorders a flat regression-mixture vector
/// `[omega..., beta_1..., beta_m..., sigma2...]` by nearest regression
/// vector.
fn align_regmix(flat: &[f64], truth: &RegMixParams) -> Vec<f64> {
    let m = truth.m();
    let d_z = truth.d_z();
    let beta = |j: usize| &flat[m + j * d_z..m + (j + 1) * d_z];
    let perm = best_permutation(m, |est, slot| {
        beta(est)
            .iter()
            .zip(truth.beta(slot).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    });
    let mut out = vec![0.0; flat.len()];
    for slot in 0..m {
        out[slot] = flat[perm[slot]];
        out[m + m * d_z + slot] = flat[m + m * d_z + perm[slot]];
        out[m + slot * d_z..m + (slot + 1) * d_z].copy_from_slice(beta(perm[slot]));
    }
    out
}

/// Ordinary least squares with residual variance, used to reconstruct a
/// starting point from the warmup block.
fn ols(data: &[RegObservation]) -> Result<(DVector<f64>, f64), HarnessError> {
    let d_z = data[0].z.len();
    let mut xtx = DMatrix::<f64>::zeros(d_z, d_z);
    let mut xtr = DVector::<f64>::zeros(d_z);
    for obs in data {
        xtx += &obs.z * obs.z.transpose();
        xtr += &obs.z * obs.r;
    }
    let beta = xtx.lu().solve(&xtr).ok_or_else(|| {
        HarnessError::Config("warmup block is collinear; cannot reconstruct theta0".into())
    })?;
    let rss: f64 = data
        .iter()
        .map(|o| {
            let e = o.r - beta.dot(&o.z);
            e * e
        })
        .sum();
    Ok((beta, (rss / data.len() as f64).max(1e-6)))
}

/// Starting point reconstruction for the regression mixture: equal weights,
/// the warmup-block least-squares fit perturbed by plus/minus ten percent
/// per component, and the fit's residual variance.
pub fn reconstruct_theta0_regmix(
    data: &[RegObservation],
    warmup: usize,
) -> Result<RegMixParams, HarnessError> {
    let d_z = data[0].z.len();
    if warmup < d_z + 1 || data.len() < warmup {
        return Err(HarnessError::Config(format!(
            "warmup {warmup} too short to reconstruct theta0 (need at least {})",
            d_z + 1
        )));
    }
    let (beta, var) = ols(&data[..warmup])?;
    let beta1: Vec<f64> = beta.iter().map(|b| 1.1 * b).collect();
    let beta2: Vec<f64> = beta.iter().map(|b| 0.9 * b).collect();
    Ok(RegMixParams::new(&[0.5, 0.5], &[beta1, beta2], &[var, var])?)
}

/// Starting point for Poisson experiments when none is configured: equal
/// weights, intensities fanned out around the warmup-block mean.
pub fn reconstruct_theta0_poisson(
    data: &[u64],
    warmup: usize,
    m: usize,
) -> Result<PoissonMixtureParams, HarnessError> {
    let k = warmup.max(10).min(data.len());
    if k == 0 {
        return Err(HarnessError::Config("empty stream".into()));
    }
    let base = (data[..k].iter().sum::<u64>() as f64 / k as f64).max(0.5);
    let omega = vec![1.0 / m as f64; m];
    let lambda: Vec<f64> = (1..=m)
        .map(|j| base * 2.0 * j as f64 / (m as f64 + 1.0))
        .collect();
    Ok(PoissonMixtureParams::new(&omega, &lambda)?)
}

fn run_options(cfg: &ExperimentConfig, with_averaging: bool) -> RunOptions {
    RunOptions {
        warmup: cfg.warmup,
        averaging: with_averaging
            .then_some(AveragingStart::FromFraction(cfg.averaging_start_fraction)),
        retention: Retention::FinalOnly,
    }
}

fn failure_step(err: &EstimatorError) -> Option<usize> {
    match err {
        EstimatorError::DomainFailure { step, .. } => Some(*step),
        EstimatorError::TitteringtonInvalid { step } => Some(*step),
        _ => None,
    }
}

/// True Poisson parameters from the config (required for generation and
/// asymptotics at truth).
pub fn poisson_truth_params(cfg: &ExperimentConfig) -> Result<PoissonMixtureParams, HarnessError> {
    let omega = cfg
        .truth_omega
        .as_ref()
        .ok_or_else(|| HarnessError::Config("truth_omega required for poisson".into()))?;
    let lambda = cfg
        .truth_lambda
        .as_ref()
        .ok_or_else(|| HarnessError::Config("truth_lambda required for poisson".into()))?;
    Ok(PoissonMixtureParams::new(omega, lambda)?)
}

fn poisson_theta0(
    cfg: &ExperimentConfig,
    data: &[u64],
    m: usize,
) -> Result<PoissonMixtureParams, HarnessError> {
    match (&cfg.theta0_omega, &cfg.theta0_lambda) {
        (Some(o), Some(l)) => Ok(PoissonMixtureParams::new(o, l)?),
        (None, None) => reconstruct_theta0_poisson(data, cfg.warmup, m),
        _ => Err(HarnessError::Config(
            "theta0_omega and theta0_lambda must be given together".into(),
        )),
    }
}

fn regmix_theta0(
    cfg: &ExperimentConfig,
    data: &[RegObservation],
) -> Result<RegMixParams, HarnessError> {
    match (&cfg.theta0_beta, &cfg.theta0_sigma2) {
        (Some(beta_flat), Some(sigma2)) => {
            let m = sigma2.len();
            if m == 0 || beta_flat.len() % m != 0 {
                return Err(HarnessError::Config(
                    "theta0_beta length must be a multiple of the component count".into(),
                ));
            }
            let d_z = beta_flat.len() / m;
            let beta: Vec<Vec<f64>> = (0..m)
                .map(|j| beta_flat[j * d_z..(j + 1) * d_z].to_vec())
                .collect();
            let omega = cfg
                .theta0_omega
                .clone()
                .unwrap_or_else(|| vec![1.0 / m as f64; m]);
            Ok(RegMixParams::new(&omega, &beta, sigma2)?)
        }
        (None, None) => reconstruct_theta0_regmix(data, cfg.warmup),
        _ => Err(HarnessError::Config(
            "theta0_beta and theta0_sigma2 must be given together".into(),
        )),
    }
}

fn replica_rows_poisson(
    cfg: &ExperimentConfig,
    truth: &PoissonMixtureParams,
    replica: u64,
) -> Result<Vec<ReplicationRow>, HarnessError> {
    let model = PoissonMixture::new(truth.m());
    let data: Vec<u64> = gen_poisson_mixture(cfg.n, truth, &SeededStream::new(cfg.base_seed, replica))
        .into_iter()
        .map(|(y, _)| y)
        .collect();
    let data_hash = hash_poisson(&data);
    let theta0 = poisson_theta0(cfg, &data, truth.m())?;
    let dim = model.param_dim();

    let mut rows = Vec::new();
    let mut push = |algorithm: Algorithm, outcome: Result<Vec<f64>, EstimatorError>| {
        let row = match outcome {
            Ok(flat) => ReplicationRow {
                replica,
                algorithm,
                data_hash,
                failed: false,
                failure_step: None,
                params: align_poisson(&flat, truth),
            },
            Err(err) => ReplicationRow {
                replica,
                algorithm,
                data_hash,
                failed: true,
                failure_step: failure_step(&err),
                params: vec![f64::NAN; dim],
            },
        };
        rows.push(row);
    };

    let needs_ol06 = cfg.algorithms.contains(&Algorithm::Ol06);
    let needs_ol06a = cfg.algorithms.contains(&Algorithm::Ol06a);
    let mut ol06_shared: Option<SharedRun> = None;
    if needs_ol06 || needs_ol06a {
        let sched = StepSchedule::new(1.0, 0.6)?;
        ol06_shared = Some(
            run_online_em(
                &model,
                &data,
                &sched,
                None,
                &theta0,
                &run_options(cfg, needs_ol06a),
            )
            .map(|res| {
                (
                    res.final_theta.iter().copied().collect(),
                    res.averaged_theta.map(|v| v.iter().copied().collect()),
                )
            })
            .map_err(|e| e.to_string()),
        );
    }

    for &algorithm in &cfg.algorithms {
        match algorithm {
            Algorithm::Em5 => push(
                algorithm,
                batch_em_run(&model, &data, &theta0, 5)
                    .map(|(theta, _)| model.params_to_vec(&theta).iter().copied().collect()),
            ),
            Algorithm::Ol1 => {
                let sched = StepSchedule::new(1.0, 1.0)?;
                push(
                    algorithm,
                    run_online_em(&model, &data, &sched, None, &theta0, &run_options(cfg, false))
                        .map(|res| res.final_theta.iter().copied().collect()),
                );
            }
            Algorithm::Ol06 | Algorithm::Ol06a => {
                let shared = ol06_shared.as_ref().expect("computed above");
                let outcome = match shared {
                    Ok((final_theta, averaged)) => {
                        if algorithm == Algorithm::Ol06 {
                            Ok(final_theta.clone())
                        } else {
                            Ok(averaged.clone().expect("averaging requested"))
                        }
                    }
                    Err(msg) => Err(parse_shared_failure(msg)),
                };
                push(algorithm, outcome);
            }
            Algorithm::Titt => {
                let sched = StepSchedule::new(1.0, 0.6)?;
                push(
                    algorithm,
                    run_titterington_poisson(&data, &sched, &theta0)
                        .map(|res| res.final_theta.iter().copied().collect()),
                );
            }
        }
    }
    Ok(rows)
}

/// Shared OL06/OL06a failures travel as strings between the single run and
/// the two result rows; recover the step index for the row.
fn parse_shared_failure(msg: &str) -> EstimatorError {
    let step = msg
        .split("step ")
        .nth(1)
        .and_then(|rest| {
            rest.split(|c: char| !c.is_ascii_digit())
                .next()
                .and_then(|d| d.parse().ok())
        })
        .unwrap_or(0);
    EstimatorError::DomainFailure {
        step,
        source: ModelError::OutOfDomain(msg.to_string()),
    }
}

fn replica_rows_regmix(
    cfg: &ExperimentConfig,
    replica: u64,
) -> Result<Vec<ReplicationRow>, HarnessError> {
    let truth = regmix_flexmix_truth();
    let model = RegressionMixture::new(2, 3);
    let data: Vec<RegObservation> =
        gen_regmix_flexmix(cfg.n, &SeededStream::new(cfg.base_seed, replica))
            .into_iter()
            .map(|(o, _)| o)
            .collect();
    let data_hash = hash_regmix(&data);
    let theta0 = regmix_theta0(cfg, &data)?;
    let dim = model.param_dim();

    let mut rows = Vec::new();
    let mut push = |algorithm: Algorithm, outcome: Result<Vec<f64>, EstimatorError>| {
        let row = match outcome {
            Ok(flat) => ReplicationRow {
                replica,
                algorithm,
                data_hash,
                failed: false,
                failure_step: None,
                params: align_regmix(&flat, &truth),
            },
            Err(err) => ReplicationRow {
                replica,
                algorithm,
                data_hash,
                failed: true,
                failure_step: failure_step(&err),
                params: vec![f64::NAN; dim],
            },
        };
        rows.push(row);
    };

    let needs_ol06 = cfg.algorithms.contains(&Algorithm::Ol06);
    let needs_ol06a = cfg.algorithms.contains(&Algorithm::Ol06a);
    let mut ol06_shared: Option<SharedRun> = None;
    if needs_ol06 || needs_ol06a {
        let sched = StepSchedule::new(1.0, 0.6)?;
        ol06_shared = Some(
            run_online_em(
                &model,
                &data,
                &sched,
                None,
                &theta0,
                &run_options(cfg, needs_ol06a),
            )
            .map(|res| {
                (
                    res.final_theta.iter().copied().collect(),
                    res.averaged_theta.map(|v| v.iter().copied().collect()),
                )
            })
            .map_err(|e| e.to_string()),
        );
    }

    for &algorithm in &cfg.algorithms {
        match algorithm {
            Algorithm::Em5 => push(
                algorithm,
                batch_em_run(&model, &data, &theta0, 5)
                    .map(|(theta, _)| model.params_to_vec(&theta).iter().copied().collect()),
            ),
            Algorithm::Ol1 => {
                let sched = StepSchedule::new(1.0, 1.0)?;
                push(
                    algorithm,
                    run_online_em(&model, &data, &sched, None, &theta0, &run_options(cfg, false))
                        .map(|res| res.final_theta.iter().copied().collect()),
                );
            }
            Algorithm::Ol06 | Algorithm::Ol06a => {
                let shared = ol06_shared.as_ref().expect("computed above");
                let outcome = match shared {
                    Ok((final_theta, averaged)) => {
                        if algorithm == Algorithm::Ol06 {
                            Ok(final_theta.clone())
                        } else {
                            Ok(averaged.clone().expect("averaging requested"))
                        }
                    }
                    Err(msg) => Err(parse_shared_failure(msg)),
                };
                push(algorithm, outcome);
            }
            Algorithm::Titt => {
                push(
                    algorithm,
                    Err(EstimatorError::Model(ModelError::InvalidParameter(
                        "TITT is only defined for the Poisson mixture".into(),
                    ))),
                );
            }
        }
    }
    Ok(rows)
}

/// Runs the full replication study. Replicas are independent (replica index
/// = stream id) and run in a work pool; rows come back in replica order
/// regardless of the worker count.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    threads: usize,
) -> Result<ExperimentOutput, HarnessError> {
    if cfg.replications == 0 {
        return Err(HarnessError::Config("replications must be at least 1".into()));
    }
    if cfg.model == ModelKind::Regmix && cfg.algorithms.contains(&Algorithm::Titt) {
        return Err(HarnessError::Config(
            "algorithms: TITT is only defined for the Poisson mixture".into(),
        ));
    }

    let param_labels = match cfg.model {
        ModelKind::Poisson => PoissonMixture::new(poisson_truth_params(cfg)?.m())
            .param_layout()
            .labels(),
        ModelKind::Regmix => RegressionMixture::new(2, 3).param_layout().labels(),
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;

    let replicas: Vec<u64> = (0..cfg.replications as u64).collect();
    let nested: Vec<Result<Vec<ReplicationRow>, HarnessError>> = pool.install(|| {
        replicas
            .par_iter()
            .map(|&replica| match cfg.model {
                ModelKind::Poisson => {
                    let truth = poisson_truth_params(cfg)?;
                    replica_rows_poisson(cfg, &truth, replica)
                }
                ModelKind::Regmix => replica_rows_regmix(cfg, replica),
            })
            .collect()
    });

    let mut rows = Vec::with_capacity(cfg.replications * cfg.algorithms.len());
    for result in nested {
        rows.extend(result?);
    }
    let n_failed = rows.iter().filter(|r| r.failed).count();
    Ok(ExperimentOutput {
        param_labels,
        rows,
        n_failed,
    })
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        v.to_string()
    }
}

/// Per-replica results CSV.
pub fn results_csv(output: &ExperimentOutput) -> String {
    let mut s = String::new();
    s.push_str("replica,algorithm,data_hash,failed,failure_step");
    for label in &output.param_labels {
        s.push(',');
        s.push_str(label);
    }
    s.push('\n');
    for row in &output.rows {
        let _ = write!(
            s,
            "{},{},{:016x},{},{}",
            row.replica,
            row.algorithm.label(),
            row.data_hash,
            row.failed as u8,
            row.failure_step.map(|v| v.to_string()).unwrap_or_default()
        );
        for v in &row.params {
            s.push(',');
            s.push_str(&fmt_f64(*v));
        }
        s.push('\n');
    }
    s
}

/// Quantile summary CSV over the per-replica rows, one line per algorithm
/// and parameter, with the asymptotic reference interquartile range where a
/// reference standard deviation is configured.
pub fn summary_csv(cfg: &ExperimentConfig, output: &ExperimentOutput) -> String {
    let mut s = String::new();
    s.push_str(
        "algorithm,parameter,n_ok,n_failed,lo_whisker,q25,median,q75,hi_whisker,mean,ref_sd,ref_iqr\n",
    );
    for &algorithm in &cfg.algorithms {
        for (idx, label) in output.param_labels.iter().enumerate() {
            let samples: Vec<f64> = output
                .rows
                .iter()
                .filter(|r| r.algorithm == algorithm)
                .map(|r| r.params[idx])
                .collect();
            let n_failed = samples.iter().filter(|v| !v.is_finite()).count();
            let n_ok = samples.len() - n_failed;
            let (q, mean) = match summarize_quantiles(&samples) {
                Ok(q) => {
                    let finite: Vec<f64> =
                        samples.iter().copied().filter(|v| v.is_finite()).collect();
                    let mean = finite.iter().sum::<f64>() / finite.len() as f64;
                    (Some(q), Some(mean))
                }
                Err(_) => (None, None),
            };
            let reference = cfg
                .reference_sd
                .iter()
                .find(|(l, _)| l == label)
                .map(|(_, sd)| *sd);
            let _ = write!(s, "{},{label},{n_ok},{n_failed}", algorithm.label());
            match q {
                Some(q) => {
                    let _ = write!(
                        s,
                        ",{},{},{},{},{},{}",
                        fmt_f64(q.lo_whisker),
                        fmt_f64(q.q25),
                        fmt_f64(q.median),
                        fmt_f64(q.q75),
                        fmt_f64(q.hi_whisker),
                        fmt_f64(mean.unwrap())
                    );
                }
                None => s.push_str(",,,,,,"),
            }
            match reference {
                Some(sd) => {
                    let _ = write!(
                        s,
                        ",{},{}",
                        fmt_f64(sd),
                        fmt_f64(asymptotic_reference_iqr(sd, cfg.n))
                    );
                }
                None => s.push_str(",,"),
            }
            s.push('\n');
        }
    }
    s
}

/// Metadata sidecar: code version, generator identity, resolved config.
pub fn metadata_text(cfg: &ExperimentConfig) -> String {
    let mut s = String::new();
    s.push_str("# online-em experiment metadata\n");
    let _ = writeln!(s, "code_version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "generator = {GENERATOR_ID}");
    s.push_str("# resolved configuration\n");
    s.push_str(&cfg.echo());
    s
}

/// Writes results.csv, summary.csv and metadata.txt into `out_dir`.
pub fn write_experiment(
    out_dir: &Path,
    cfg: &ExperimentConfig,
    output: &ExperimentOutput,
) -> io::Result<()> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("results.csv"), results_csv(output))?;
    fs::write(out_dir.join("summary.csv"), summary_csv(cfg, output))?;
    fs::write(out_dir.join("metadata.txt"), metadata_text(cfg))?;
    Ok(())
}

/// Outcome of a single `fit` run.
#[derive(Debug)]
pub struct FitOutput {
    pub param_labels: Vec<String>,
    pub final_theta: Vec<f64>,
    pub averaged_theta: Option<Vec<f64>>,
    pub n_steps: usize,
    pub trajectory_csv: Option<String>,
}

fn averaging_start(cfg: &ExperimentConfig) -> Option<AveragingStart> {
    match cfg.averaging {
        AveragingChoice::None => None,
        AveragingChoice::Fraction(f) => Some(AveragingStart::FromFraction(f)),
        AveragingChoice::Step(n0) => Some(AveragingStart::FromStep(n0)),
    }
}

fn retention(cfg: &ExperimentConfig) -> Retention {
    match cfg.retention {
        RetentionChoice::Final => Retention::FinalOnly,
        RetentionChoice::Every(k) => Retention::Thinned(k),
        RetentionChoice::Full => Retention::Full,
    }
}

fn trajectory_csv<M: LatentModel>(model: &M, traj: &online_em::estimators::Trajectory) -> String {
    let mut s = String::new();
    s.push_str("n,gamma");
    for label in model.stat_layout().labels() {
        s.push(',');
        s.push_str(&label);
    }
    for label in model.param_layout().labels() {
        s.push(',');
        s.push_str(&label);
    }
    s.push('\n');
    for step in &traj.steps {
        let _ = write!(s, "{},{}", step.n, step.gamma);
        for v in step.s_hat.as_slice() {
            s.push(',');
            s.push_str(&fmt_f64(*v));
        }
        for v in step.theta.iter() {
            s.push(',');
            s.push_str(&fmt_f64(*v));
        }
        s.push('\n');
    }
    s
}

fn fit_generic<M: LatentModel>(
    cfg: &ExperimentConfig,
    model: &M,
    data: &[M::Obs],
    theta0: &M::Params,
) -> Result<FitOutput, HarnessError> {
    if let Some(gamma) = cfg.constant_gamma {
        // Debug mode: constant step size, final estimate only.
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(HarnessError::Config(format!(
                "constant_gamma {gamma} outside (0, 1]"
            )));
        }
        let mut theta = theta0.clone();
        let mut s: Option<StatVector> = None;
        for (idx, y) in data.iter().enumerate() {
            let n = idx + 1;
            let inhibit = n <= cfg.warmup;
            let s_next = match &s {
                Some(prev) => blend_stats(prev, &model.cond_expect_stat(y, &theta), gamma)?,
                None => model.cond_expect_stat(y, &theta),
            };
            if !inhibit {
                theta = model
                    .mstep(&s_next)
                    .map_err(|source| EstimatorError::DomainFailure { step: n, source })?;
            }
            s = Some(s_next);
        }
        return Ok(FitOutput {
            param_labels: model.param_layout().labels(),
            final_theta: model.params_to_vec(&theta).iter().copied().collect(),
            averaged_theta: None,
            n_steps: data.len(),
            trajectory_csv: None,
        });
    }

    let sched = StepSchedule::new(cfg.gamma0, cfg.alpha)?;
    let opts = RunOptions {
        warmup: cfg.warmup,
        averaging: averaging_start(cfg),
        retention: retention(cfg),
    };
    let res = run_online_em(model, data, &sched, None, theta0, &opts)?;
    Ok(FitOutput {
        param_labels: model.param_layout().labels(),
        final_theta: res.final_theta.iter().copied().collect(),
        averaged_theta: res.averaged_theta.map(|v| v.iter().copied().collect()),
        n_steps: res.n_steps,
        trajectory_csv: res.trajectory.as_ref().map(|t| trajectory_csv(model, t)),
    })
}

/// Single online run on generated or loaded data, honouring the schedule,
/// averaging and retention choices in the config.
pub fn run_fit(cfg: &ExperimentConfig) -> Result<FitOutput, HarnessError> {
    match cfg.model {
        ModelKind::Poisson => {
            let data: Vec<u64> = match &cfg.data_file {
                Some(path) => online_em::simgen::read_poisson_csv(path)?
                    .into_iter()
                    .map(|(y, _)| y)
                    .collect(),
                None => {
                    let truth = poisson_truth_params(cfg)?;
                    gen_poisson_mixture(cfg.n, &truth, &SeededStream::new(cfg.base_seed, 0))
                        .into_iter()
                        .map(|(y, _)| y)
                        .collect()
                }
            };
            let m = match (&cfg.theta0_lambda, &cfg.truth_lambda) {
                (Some(l), _) => l.len(),
                (None, Some(l)) => l.len(),
                (None, None) => {
                    return Err(HarnessError::Config(
                        "poisson fit needs theta0_lambda or truth_lambda to fix the component count"
                            .into(),
                    ))
                }
            };
            let theta0 = poisson_theta0(cfg, &data, m)?;
            if cfg.warmup == 0 {
                return Err(HarnessError::Config(
                    "poisson fit requires warmup >= 1 to seed the statistic".into(),
                ));
            }
            fit_generic(cfg, &PoissonMixture::new(m), &data, &theta0)
        }
        ModelKind::Regmix => {
            let data: Vec<RegObservation> = match &cfg.data_file {
                Some(path) => online_em::simgen::read_regmix_csv(path)?
                    .into_iter()
                    .map(|(o, _)| o)
                    .collect(),
                None => gen_regmix_flexmix(cfg.n, &SeededStream::new(cfg.base_seed, 0))
                    .into_iter()
                    .map(|(o, _)| o)
                    .collect(),
            };
            let theta0 = regmix_theta0(cfg, &data)?;
            fit_generic(cfg, &RegressionMixture::new(2, 3), &data, &theta0)
        }
    }
}
