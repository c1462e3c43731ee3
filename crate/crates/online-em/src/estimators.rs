//! Generic estimation algorithms over any [`LatentModel`]: batch EM, the
//! online EM recursion, Polyak-Ruppert averaging, and the
//! information-weighted gradient recursion for the Poisson mixture.

use nalgebra::DVector;

use crate::error::EstimatorError;
use crate::model::{blend_stats, LatentModel, StatVector, StepSchedule};
use crate::poisson::{PoissonMixture, PoissonMixtureParams};

/// One recorded state of an online run.
#[derive(Debug, Clone)]
pub struct TrajectoryStep {
    pub n: usize,
    pub gamma: f64,
    pub s_hat: StatVector,
    /// Flat parameter vector (see [`LatentModel::params_to_vec`]).
    pub theta: DVector<f64>,
}

/// Per-step record of a single run. Steps are ordered by `n`; whether they
/// are contiguous depends on the retention policy used to produce them.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    pub warmup_len: usize,
}

/// How much of the trajectory an online run keeps in memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Retention {
    /// Keep nothing; only the final (and averaged) estimate survive.
    FinalOnly,
    /// Keep every `k`-th step plus the final one.
    Thinned(usize),
    /// Keep every step.
    Full,
}

/// When to start the running parameter average.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AveragingStart {
    FromStep(usize),
    /// Start at `ceil(fraction * n)`; the usual choice is one half.
    FromFraction(f64),
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Number of initial observations blended into the statistic with the
    /// parameter re-estimation step inhibited.
    pub warmup: usize,
    pub averaging: Option<AveragingStart>,
    pub retention: Retention,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            warmup: 0,
            averaging: None,
            retention: Retention::FinalOnly,
        }
    }
}

/// Outcome of one estimator run.
#[derive(Debug, Clone)]
pub struct RunResult<P> {
    pub final_params: P,
    /// Flat copy of `final_params`.
    pub final_theta: DVector<f64>,
    /// Mean of the parameter iterates from `avg_start` to the end;
    /// present iff averaging was requested.
    pub averaged_theta: Option<DVector<f64>>,
    pub avg_start: Option<usize>,
    pub trajectory: Option<Trajectory>,
    pub n_steps: usize,
}

/// One iteration of batch EM: average the conditional statistic
/// expectations over the whole dataset at the current parameter, then apply
/// the M-step map.
pub fn batch_em_iterate<M: LatentModel>(
    model: &M,
    data: &[M::Obs],
    params: &M::Params,
) -> Result<M::Params, EstimatorError> {
    if data.is_empty() {
        return Err(EstimatorError::EmptyStream);
    }
    let mut acc = DVector::zeros(model.stat_dim());
    for y in data {
        acc += model.cond_expect_stat(y, params).values();
    }
    acc /= data.len() as f64;
    let s = StatVector::new(acc)?;
    Ok(model.mstep(&s)?)
}

/// Runs `iterations` batch EM steps and records the normalised
/// log-likelihood before the first and after every iteration.
pub fn batch_em_run<M: LatentModel>(
    model: &M,
    data: &[M::Obs],
    params: &M::Params,
    iterations: usize,
) -> Result<(M::Params, Vec<f64>), EstimatorError> {
    let mut theta = params.clone();
    let mut loglik = Vec::with_capacity(iterations + 1);
    loglik.push(crate::model::mean_loglik(model, data, &theta));
    for _ in 0..iterations {
        theta = batch_em_iterate(model, data, &theta)?;
        loglik.push(crate::model::mean_loglik(model, data, &theta));
    }
    Ok((theta, loglik))
}

/// One step of the online EM recursion: blend the statistic towards the
/// conditional expectation at the new observation, then re-estimate the
/// parameter unless inhibited (warmup).
pub fn online_em_step<M: LatentModel>(
    model: &M,
    s_hat: &StatVector,
    params: &M::Params,
    y: &M::Obs,
    gamma: f64,
    inhibit_mstep: bool,
) -> Result<(StatVector, M::Params), EstimatorError> {
    let sbar = model.cond_expect_stat(y, params);
    let s_next = blend_stats(s_hat, &sbar, gamma)?;
    let theta_next = if inhibit_mstep {
        params.clone()
    } else {
        model.mstep(&s_next)?
    };
    Ok((s_next, theta_next))
}

fn resolve_avg_start(
    avg: AveragingStart,
    n_steps: usize,
    warmup: usize,
) -> Result<usize, EstimatorError> {
    let n0 = match avg {
        AveragingStart::FromStep(n0) => n0,
        AveragingStart::FromFraction(f) => {
            assert!(f > 0.0 && f < 1.0, "averaging fraction must lie in (0, 1)");
            (f * n_steps as f64).ceil() as usize
        }
    };
    if n0 <= warmup || n0 > n_steps {
        return Err(EstimatorError::AveragingRange {
            n0,
            warmup,
            last: n_steps,
        });
    }
    Ok(n0)
}

/// Runs the online EM recursion over a finite stream.
///
/// When `s0` is `None` the statistic is seeded with the conditional
/// expectation at the first observation, which coincides with a first blend
/// of step size one (the `gamma0 = 1` schedules used throughout). Supplying
/// `s0` makes the first step a genuine blend, which is required for
/// schedules with `gamma0 < 1` and no warmup.
pub fn run_online_em<M: LatentModel>(
    model: &M,
    stream: &[M::Obs],
    sched: &StepSchedule,
    s0: Option<StatVector>,
    theta0: &M::Params,
    opts: &RunOptions,
) -> Result<RunResult<M::Params>, EstimatorError> {
    let n_steps = stream.len();
    if n_steps == 0 {
        return Err(EstimatorError::EmptyStream);
    }
    if n_steps <= opts.warmup {
        return Err(EstimatorError::InsufficientData {
            needed: opts.warmup + 1,
            got: n_steps,
        });
    }
    if s0.is_none() && opts.warmup < model.min_warmup() {
        return Err(EstimatorError::MissingInitialStat {
            warmup: opts.warmup,
            min_warmup: model.min_warmup(),
        });
    }
    let avg_start = opts
        .averaging
        .map(|a| resolve_avg_start(a, n_steps, opts.warmup))
        .transpose()?;

    let mut theta = theta0.clone();
    let mut theta_vec = model.params_to_vec(&theta);
    let mut s = s0;
    let mut avg_sum: Option<DVector<f64>> = avg_start.map(|_| DVector::zeros(theta_vec.len()));
    let mut avg_count = 0usize;
    let mut steps = Vec::new();

    for (idx, y) in stream.iter().enumerate() {
        let n = idx + 1;
        let gamma = sched.gamma(n);
        let inhibit = n <= opts.warmup;
        let s_next = match &s {
            Some(prev) => blend_stats(prev, &model.cond_expect_stat(y, &theta), gamma)?,
            None => model.cond_expect_stat(y, &theta),
        };
        if !inhibit {
            theta = model
                .mstep(&s_next)
                .map_err(|source| EstimatorError::DomainFailure { step: n, source })?;
            theta_vec = model.params_to_vec(&theta);
        }
        s = Some(s_next);

        if let (Some(sum), Some(n0)) = (avg_sum.as_mut(), avg_start) {
            if n >= n0 {
                *sum += &theta_vec;
                avg_count += 1;
            }
        }
        let keep = match opts.retention {
            Retention::FinalOnly => false,
            Retention::Thinned(k) => k > 0 && (n % k == 0 || n == n_steps),
            Retention::Full => true,
        };
        if keep {
            steps.push(TrajectoryStep {
                n,
                gamma,
                s_hat: s.clone().expect("set above"),
                theta: theta_vec.clone(),
            });
        }
    }

    let averaged_theta = avg_sum.map(|sum| sum / avg_count as f64);
    let trajectory = match opts.retention {
        Retention::FinalOnly => None,
        _ => Some(Trajectory {
            steps,
            warmup_len: opts.warmup,
        }),
    };
    Ok(RunResult {
        final_theta: theta_vec,
        final_params: theta,
        averaged_theta,
        avg_start,
        trajectory,
        n_steps,
    })
}

/// Coordinate-wise mean of the parameter iterates from `n0` to the last
/// recorded step, inclusive. The trajectory must contain every step of that
/// window (full retention).
pub fn polyak_ruppert_average(
    traj: &Trajectory,
    n0: usize,
) -> Result<DVector<f64>, EstimatorError> {
    let last = traj.steps.last().map(|s| s.n).unwrap_or(0);
    if n0 > last || n0 <= traj.warmup_len {
        return Err(EstimatorError::AveragingRange {
            n0,
            warmup: traj.warmup_len,
            last,
        });
    }
    let window: Vec<&TrajectoryStep> = traj.steps.iter().filter(|s| s.n >= n0).collect();
    let expected = last - n0 + 1;
    if window.len() != expected {
        return Err(EstimatorError::AveragingRange {
            n0,
            warmup: traj.warmup_len,
            last,
        });
    }
    let mut sum = DVector::zeros(window[0].theta.len());
    for step in &window {
        sum += &step.theta;
    }
    Ok(sum / expected as f64)
}

/// Result of one information-weighted gradient update for the Poisson
/// mixture. The intensity update is not constraint-preserving, so the raw
/// values are returned together with a validity flag instead of a
/// parameter object.
#[derive(Debug, Clone)]
pub struct TitteringtonUpdate {
    pub omega: Vec<f64>,
    pub lambda: Vec<f64>,
    /// False when any updated intensity is non-positive.
    pub valid: bool,
}

/// One step of the complete-data-information weighted gradient recursion
/// for the Poisson mixture:
/// `omega_j += gamma (wbar_j - omega_j)`,
/// `lambda_j += gamma (wbar_j / omega_j)(y - lambda_j)`.
pub fn titterington_step_poisson(
    theta: &PoissonMixtureParams,
    y: u64,
    gamma: f64,
) -> TitteringtonUpdate {
    assert!(gamma > 0.0 && gamma <= 1.0);
    let m = theta.m();
    let model = PoissonMixture::new(m);
    let w = model.posterior_weights(y, theta);
    let yf = y as f64;
    let mut omega = Vec::with_capacity(m);
    let mut lambda = Vec::with_capacity(m);
    let mut valid = true;
    for j in 0..m {
        omega.push(theta.omega()[j] + gamma * (w[j] - theta.omega()[j]));
        let l = theta.lambda()[j] + gamma * (w[j] / theta.omega()[j]) * (yf - theta.lambda()[j]);
        if l <= 0.0 {
            valid = false;
        }
        lambda.push(l);
    }
    TitteringtonUpdate { omega, lambda, valid }
}

/// Runs the weighted gradient recursion over a stream, stopping with an
/// error at the first constraint violation (which is recorded, not masked).
pub fn run_titterington_poisson(
    stream: &[u64],
    sched: &StepSchedule,
    theta0: &PoissonMixtureParams,
) -> Result<RunResult<PoissonMixtureParams>, EstimatorError> {
    if stream.is_empty() {
        return Err(EstimatorError::EmptyStream);
    }
    let model = PoissonMixture::new(theta0.m());
    let mut theta = theta0.clone();
    for (idx, y) in stream.iter().enumerate() {
        let n = idx + 1;
        let upd = titterington_step_poisson(&theta, *y, sched.gamma(n));
        if !upd.valid {
            return Err(EstimatorError::TitteringtonInvalid { step: n });
        }
        theta = PoissonMixtureParams::new(&upd.omega, &upd.lambda)
            .map_err(|source| EstimatorError::DomainFailure { step: n, source })?;
    }
    let final_theta = model.params_to_vec(&theta);
    Ok(RunResult {
        final_params: theta,
        final_theta,
        averaged_theta: None,
        avg_start: None,
        trajectory: None,
        n_steps: stream.len(),
    })
}
