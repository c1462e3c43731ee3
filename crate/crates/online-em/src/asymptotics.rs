//! Numerical machinery for the convergence theory: mean field of the
//! statistic recursion, Kullback-Leibler surrogate, information-matrix
//! estimation, Lyapunov-equation solving and asymptotic covariances.
//!
//! Expectations over the observation law are abstracted by
//! [`ObservationLaw`], with two implementations: a dataset average and, for
//! the Poisson mixture, truncated exact summation that turns probabilistic
//! statements into deterministic checks.

use nalgebra::{DMatrix, DVector};
use std::io::{self, Write};

use crate::error::{AsymptoticsError, ModelError};
use crate::model::{LatentModel, StatVector, StepSchedule};
use crate::poisson::PoissonMixtureParams;

/// A weighting of observations under which expectations are taken.
/// Weights are non-negative and sum to one (up to a truncated tail).
pub trait ObservationLaw<Obs> {
    fn for_each_weighted(&self, f: &mut dyn FnMut(&Obs, f64));
}

/// Empirical law of a dataset: every observation has weight `1/n`.
pub struct Empirical<'a, Obs>(pub &'a [Obs]);

impl<Obs> ObservationLaw<Obs> for Empirical<'_, Obs> {
    fn for_each_weighted(&self, f: &mut dyn FnMut(&Obs, f64)) {
        let w = 1.0 / self.0.len() as f64;
        for y in self.0 {
            f(y, w);
        }
    }
}

/// Exact law of a Poisson mixture, truncated once the enumerated mass
/// reaches `1 - tail`.
pub struct PoissonExactLaw {
    outcomes: Vec<(u64, f64)>,
}

impl PoissonExactLaw {
    pub fn new(truth: &PoissonMixtureParams, tail: f64) -> Self {
        assert!(tail > 0.0 && tail < 1.0);
        let m = truth.m();
        // Per-component pmf values maintained by the usual recurrence.
        let mut p: Vec<f64> = (0..m).map(|j| (-truth.lambda()[j]).exp()).collect();
        let mut outcomes = Vec::new();
        let mut total = 0.0;
        let lambda_max = truth.lambda().max();
        let hard_cap = (lambda_max + 20.0 * lambda_max.sqrt() + 200.0) as u64;
        let mut y = 0u64;
        loop {
            let mass: f64 = (0..m).map(|j| truth.omega()[j] * p[j]).sum();
            outcomes.push((y, mass));
            total += mass;
            if total >= 1.0 - tail || y > hard_cap {
                break;
            }
            y += 1;
            for (j, pj) in p.iter_mut().enumerate() {
                *pj *= truth.lambda()[j] / y as f64;
            }
        }
        PoissonExactLaw { outcomes }
    }

    /// Total enumerated mass (one minus the truncated tail).
    pub fn mass(&self) -> f64 {
        self.outcomes.iter().map(|(_, w)| w).sum()
    }

    pub fn support_len(&self) -> usize {
        self.outcomes.len()
    }
}

impl ObservationLaw<u64> for PoissonExactLaw {
    fn for_each_weighted(&self, f: &mut dyn FnMut(&u64, f64)) {
        for (y, w) in &self.outcomes {
            f(y, *w);
        }
    }
}

/// Expected conditional statistic under the law at parameter `theta`.
pub fn expected_stat<M, L>(model: &M, law: &L, params: &M::Params) -> StatVector
where
    M: LatentModel,
    L: ObservationLaw<M::Obs>,
{
    let mut acc = DVector::zeros(model.stat_dim());
    law.for_each_weighted(&mut |y, w| {
        acc.axpy(w, model.cond_expect_stat(y, params).values(), 1.0);
    });
    StatVector::new(acc).expect("expectation of finite statistics is finite")
}

/// Mean field of the statistic-space recursion:
/// `h(s) = E[sbar(Y; thetabar(s))] - s`.
pub fn mean_field<M, L>(model: &M, law: &L, s: &StatVector) -> Result<StatVector, ModelError>
where
    M: LatentModel,
    L: ObservationLaw<M::Obs>,
{
    let theta = model.mstep(s)?;
    let expected = expected_stat(model, law, &theta);
    StatVector::new(expected.values() - s.values())
}

/// Expected negative log-likelihood under the law: the Kullback-Leibler
/// divergence to the model up to the additive entropy of the law, which
/// does not depend on the parameter. Minimisers and descent directions are
/// unaffected by the missing constant.
pub fn kl_surrogate<M, L>(model: &M, law: &L, params: &M::Params) -> f64
where
    M: LatentModel,
    L: ObservationLaw<M::Obs>,
{
    let mut acc = 0.0;
    law.for_each_weighted(&mut |y, w| {
        acc -= w * model.loglik(y, params);
    });
    acc
}

/// Score outer-product information estimate with a rank flag.
#[derive(Debug, Clone)]
pub struct InformationEstimate {
    pub matrix: DMatrix<f64>,
    /// False when the estimate is numerically rank deficient.
    pub full_rank: bool,
}

/// Expected outer product of the observed-data score,
/// `E[grad log g grad log g']`, assembled through the conditional-statistic
/// route. For the empirical law this is the usual `1/n sum` estimate of the
/// information matrix at the evaluation point.
pub fn empirical_information<M, L>(model: &M, law: &L, params: &M::Params) -> InformationEstimate
where
    M: LatentModel,
    L: ObservationLaw<M::Obs>,
{
    let d = model.free_dim();
    let mut acc = DMatrix::zeros(d, d);
    law.for_each_weighted(&mut |y, w| {
        let score = model.score(y, params);
        acc.syger(w, &score, &score, 1.0);
    });
    // syger fills the lower triangle; mirror it.
    for i in 0..d {
        for j in i + 1..d {
            acc[(i, j)] = acc[(j, i)];
        }
    }
    let eig = acc.clone().symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(f64::MIN, f64::max);
    let min = eig.iter().cloned().fold(f64::MAX, f64::min);
    InformationEstimate {
        matrix: acc,
        full_rank: max > 0.0 && min > 1e-10 * max,
    }
}

/// Expected conditional complete-data information
/// `-E[ E_theta[ d^2 log f | Y ] ]` under the law. Does not correspond to a
/// Fisher information matrix in general; positive definiteness is reported
/// by the flag rather than enforced.
pub fn complete_fim_pi<M, L>(model: &M, law: &L, params: &M::Params) -> InformationEstimate
where
    M: LatentModel,
    L: ObservationLaw<M::Obs>,
{
    let d = model.free_dim();
    let mut acc = DMatrix::zeros(d, d);
    law.for_each_weighted(&mut |y, w| {
        acc += model.cond_complete_info(y, params) * w;
    });
    let eig = acc.clone().symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(f64::MIN, f64::max);
    let min = eig.iter().cloned().fold(f64::MAX, f64::min);
    InformationEstimate {
        matrix: acc,
        full_rank: max > 0.0 && min > 1e-10 * max,
    }
}

fn max_real_eigenvalue_part(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|e| e.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// A stable drift matrix together with a symmetric PSD noise covariance.
#[derive(Debug, Clone)]
pub struct StableMatrixPair {
    h: DMatrix<f64>,
    gamma: DMatrix<f64>,
}

impl StableMatrixPair {
    pub fn new(h: DMatrix<f64>, gamma: DMatrix<f64>) -> Result<Self, AsymptoticsError> {
        assert_eq!(h.nrows(), h.ncols());
        assert_eq!(gamma.nrows(), h.nrows());
        assert_eq!(gamma.ncols(), h.ncols());
        let max_re = max_real_eigenvalue_part(&h);
        if max_re >= 0.0 {
            return Err(AsymptoticsError::NotStable { max_re });
        }
        let scale = gamma.norm().max(1e-300);
        if (&gamma - gamma.transpose()).norm() > 1e-8 * scale {
            return Err(AsymptoticsError::NotPsd("noise covariance is not symmetric".into()));
        }
        let gamma = (&gamma + gamma.transpose()) * 0.5;
        let min_eig = gamma
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::MAX, f64::min);
        if min_eig < -1e-8 * scale {
            return Err(AsymptoticsError::NotPsd(format!(
                "smallest eigenvalue {min_eig}"
            )));
        }
        Ok(StableMatrixPair { h, gamma })
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    /// Spectral stability margin: `-max Re(eig(H))`, reported rather than
    /// enforced against any particular step-size scale.
    pub fn spectral_bound(&self) -> f64 {
        -max_real_eigenvalue_part(&self.h)
    }
}

/// Residual tolerance of the Lyapunov solve, relative to `|Gamma|`.
const LYAPUNOV_RESIDUAL_TOL: f64 = 1e-10;

/// Solves `(H + zeta I) Sigma + Sigma (H' + zeta I) = -Gamma` by the
/// vectorised (Kronecker) linear system; the dimensions in play are small
/// enough that the direct d^2 x d^2 solve is the simplest correct choice.
pub fn solve_lyapunov(
    pair: &StableMatrixPair,
    zeta: f64,
) -> Result<DMatrix<f64>, AsymptoticsError> {
    assert!(zeta >= 0.0);
    let d = pair.dim();
    let a = pair.h() + DMatrix::identity(d, d) * zeta;
    let max_re = max_real_eigenvalue_part(&a);
    if max_re >= 0.0 {
        return Err(AsymptoticsError::NotStable { max_re });
    }
    let eye = DMatrix::<f64>::identity(d, d);
    let system = eye.kronecker(&a) + a.kronecker(&eye);
    let rhs = DVector::from_column_slice((-pair.gamma()).as_slice());
    let sol = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| AsymptoticsError::Singular("vectorised Lyapunov system".into()))?;
    let sigma = DMatrix::from_column_slice(d, d, sol.as_slice());
    let sigma = (&sigma + sigma.transpose()) * 0.5;
    let residual = (&a * &sigma + &sigma * a.transpose() + pair.gamma()).norm();
    let tol = LYAPUNOV_RESIDUAL_TOL * pair.gamma().norm().max(1e-300);
    if residual > tol {
        return Err(AsymptoticsError::ResidualTooLarge { residual, tol });
    }
    Ok(sigma)
}

/// Asymptotic covariance of the averaged iterates: `H^-1 Gamma H^-T`.
pub fn averaged_covariance(pair: &StableMatrixPair) -> Result<DMatrix<f64>, AsymptoticsError> {
    let lu = pair.h().clone().lu();
    let x = lu
        .solve(pair.gamma())
        .ok_or_else(|| AsymptoticsError::Singular("drift matrix".into()))?;
    // H^-1 Gamma H^-T = (H^-1 (H^-1 Gamma)')'; Gamma symmetric.
    let y = lu
        .solve(&x.transpose())
        .ok_or_else(|| AsymptoticsError::Singular("drift matrix".into()))?;
    Ok((&y + y.transpose()) * 0.5)
}

/// Lyapunov shift implied by a step-size schedule: zero for slow decay,
/// `1/gamma0` at the boundary exponent.
pub fn zeta_for_schedule(sched: &StepSchedule) -> f64 {
    if sched.alpha() < 1.0 {
        0.0
    } else {
        1.0 / sched.gamma0()
    }
}

/// Central-difference Hessian of a scalar function of the free parameter
/// vector, with per-coordinate steps `step_rel * max(|theta_i|, 1)`.
pub fn fd_hessian<F>(f: F, theta: &DVector<f64>, step_rel: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let d = theta.len();
    let h: Vec<f64> = theta.iter().map(|t| step_rel * t.abs().max(1.0)).collect();
    let mut out = DMatrix::zeros(d, d);
    let f0 = f(theta);
    for i in 0..d {
        let mut tp = theta.clone();
        let mut tm = theta.clone();
        tp[i] += h[i];
        tm[i] -= h[i];
        out[(i, i)] = (f(&tp) - 2.0 * f0 + f(&tm)) / (h[i] * h[i]);
        for j in i + 1..d {
            let mut tpp = theta.clone();
            let mut tpm = theta.clone();
            let mut tmp = theta.clone();
            let mut tmm = theta.clone();
            tpp[i] += h[i];
            tpp[j] += h[j];
            tpm[i] += h[i];
            tpm[j] -= h[j];
            tmp[i] -= h[i];
            tmp[j] += h[j];
            tmm[i] -= h[i];
            tmm[j] -= h[j];
            let v = (f(&tpp) - f(&tpm) - f(&tmp) + f(&tmm)) / (4.0 * h[i] * h[j]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Drift/noise pair of the parameter-space recursion near a stationary
/// point, together with the ingredients it was assembled from.
#[derive(Debug, Clone)]
pub struct ThetaFieldAssembly {
    pub pair: StableMatrixPair,
    /// Expected conditional complete-data information at the point.
    pub complete_info: DMatrix<f64>,
    /// Expected score outer product at the point.
    pub score_outer: DMatrix<f64>,
    /// Finite-difference Hessian of the KL surrogate at the point.
    pub kl_hessian: DMatrix<f64>,
}

/// Assembles the drift matrix `H = -I_c^-1 * hess K` and noise covariance
/// `Gamma = I_c^-1 E[grad grad'] I_c^-1` of the parameter-space recursion
/// at `theta_star`, with the KL Hessian obtained by central finite
/// differences of the law-averaged negative log-likelihood.
pub fn assemble_theta_field<M, L>(
    model: &M,
    law: &L,
    theta_star: &M::Params,
    fd_step_rel: f64,
) -> Result<ThetaFieldAssembly, AsymptoticsError>
where
    M: LatentModel,
    L: ObservationLaw<M::Obs>,
{
    let complete_info = complete_fim_pi(model, law, theta_star).matrix;
    let score_outer = empirical_information(model, law, theta_star).matrix;
    let free = model.to_free(theta_star);
    let kl_hessian = fd_hessian(
        |v| {
            let p = model
                .from_free(v)
                .expect("perturbed parameter left the valid set during differencing");
            kl_surrogate(model, law, &p)
        },
        &free,
        fd_step_rel,
    );
    let lu = complete_info.clone().lu();
    let h = -lu
        .solve(&kl_hessian)
        .ok_or_else(|| AsymptoticsError::Singular("complete-data information".into()))?;
    let tmp = lu
        .solve(&score_outer)
        .ok_or_else(|| AsymptoticsError::Singular("complete-data information".into()))?;
    let gamma = lu
        .solve(&tmp.transpose())
        .ok_or_else(|| AsymptoticsError::Singular("complete-data information".into()))?;
    let pair = StableMatrixPair::new(h, gamma)?;
    Ok(ThetaFieldAssembly {
        pair,
        complete_info,
        score_outer,
        kl_hessian,
    })
}

/// Full asymptotic summary at a stationary point: drift and noise matrices,
/// the solution of the Lyapunov equation, the averaging covariance, and the
/// information-based standard deviations and correlations.
#[derive(Debug, Clone)]
pub struct AsymptoticReport {
    pub h: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub sigma_avg: DMatrix<f64>,
    /// Square roots of the diagonal of the inverted score-outer-product
    /// information matrix.
    pub std_devs: DVector<f64>,
    /// Correlation matrix implied by the same inverse.
    pub correlations: DMatrix<f64>,
}

impl AsymptoticReport {
    pub fn compute<M, L>(
        model: &M,
        law: &L,
        theta_star: &M::Params,
        zeta: f64,
        fd_step_rel: f64,
    ) -> Result<Self, AsymptoticsError>
    where
        M: LatentModel,
        L: ObservationLaw<M::Obs>,
    {
        let assembly = assemble_theta_field(model, law, theta_star, fd_step_rel)?;
        let sigma = solve_lyapunov(&assembly.pair, zeta)?;
        let sigma_avg = averaged_covariance(&assembly.pair)?;
        let (std_devs, correlations) = covariance_summary(&invert_information(
            &assembly.score_outer,
        )?);
        Ok(AsymptoticReport {
            h: assembly.pair.h().clone(),
            gamma: assembly.pair.gamma().clone(),
            sigma,
            sigma_avg,
            std_devs,
            correlations,
        })
    }

    /// CSV blocks, row-major, with `#` header comments.
    pub fn write_csv<W: Write>(&self, mut w: W, labels: &[String]) -> io::Result<()> {
        writeln!(w, "# asymptotic report, dimension {}", self.h.nrows())?;
        writeln!(w, "# coordinates: {}", labels.join(","))?;
        write_matrix_block(&mut w, "H", &self.h)?;
        write_matrix_block(&mut w, "Gamma", &self.gamma)?;
        write_matrix_block(&mut w, "Sigma", &self.sigma)?;
        write_matrix_block(&mut w, "Sigma_avg", &self.sigma_avg)?;
        writeln!(w, "# block: std_devs ({} entries)", self.std_devs.len())?;
        let row: Vec<String> = self.std_devs.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", row.join(","))?;
        write_matrix_block(&mut w, "correlations", &self.correlations)?;
        Ok(())
    }
}

/// Inverts a symmetric information matrix, failing loudly when singular.
pub fn invert_information(info: &DMatrix<f64>) -> Result<DMatrix<f64>, AsymptoticsError> {
    info.clone()
        .try_inverse()
        .ok_or_else(|| AsymptoticsError::Singular("information matrix".into()))
}

/// Standard deviations and correlation matrix of a covariance matrix.
pub fn covariance_summary(cov: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let d = cov.nrows();
    let sd = DVector::from_fn(d, |i, _| cov[(i, i)].max(0.0).sqrt());
    let corr = DMatrix::from_fn(d, d, |i, j| {
        let denom = sd[i] * sd[j];
        if denom > 0.0 {
            cov[(i, j)] / denom
        } else {
            0.0
        }
    });
    (sd, corr)
}

fn write_matrix_block<W: Write>(w: &mut W, name: &str, m: &DMatrix<f64>) -> io::Result<()> {
    writeln!(w, "# block: {name} ({}x{}, row-major)", m.nrows(), m.ncols())?;
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| m[(i, j)].to_string()).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
