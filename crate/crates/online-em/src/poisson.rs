//! Mixture of `m` Poisson distributions.
//!
//! The complete data is the pair `(Y, W)` where `W` is the unobserved
//! component label. Per component the sufficient statistic is the posterior
//! mass and the posterior-weighted count, so the statistic vector is laid
//! out as `[s1_1, s2_1, ..., s1_m, s2_m]`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::ModelError;
use crate::model::{LatentModel, Layout, StatVector};

/// Weight-sum tolerance shared by parameter and statistic validation.
const SIMPLEX_TOL: f64 = 1e-12;

/// Mixture weights and per-component intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonMixtureParams {
    omega: DVector<f64>,
    lambda: DVector<f64>,
}

impl PoissonMixtureParams {
    pub fn new(omega: &[f64], lambda: &[f64]) -> Result<Self, ModelError> {
        if omega.len() != lambda.len() || omega.is_empty() {
            return Err(ModelError::Dimension {
                expected: omega.len().max(1),
                got: lambda.len(),
            });
        }
        if omega.iter().any(|w| !w.is_finite()) || lambda.iter().any(|l| !l.is_finite()) {
            return Err(ModelError::NonFinite("Poisson mixture parameters".into()));
        }
        if omega.iter().any(|&w| w <= 0.0) {
            return Err(ModelError::InvalidParameter(
                "mixture weights must be strictly positive".into(),
            ));
        }
        let sum: f64 = omega.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(ModelError::InvalidParameter(format!(
                "mixture weights sum to {sum}, expected 1"
            )));
        }
        if lambda.iter().any(|&l| l <= 0.0) {
            return Err(ModelError::InvalidParameter(
                "intensities must be strictly positive".into(),
            ));
        }
        Ok(PoissonMixtureParams {
            omega: DVector::from_column_slice(omega),
            lambda: DVector::from_column_slice(lambda),
        })
    }

    pub fn m(&self) -> usize {
        self.omega.len()
    }

    pub fn omega(&self) -> &DVector<f64> {
        &self.omega
    }

    pub fn lambda(&self) -> &DVector<f64> {
        &self.lambda
    }

    /// Mixture mean `sum_j omega_j lambda_j`.
    pub fn mean(&self) -> f64 {
        self.omega.dot(&self.lambda)
    }
}

/// The model itself carries only the component count.
#[derive(Debug, Clone, Copy)]
pub struct PoissonMixture {
    m: usize,
}

impl PoissonMixture {
    pub fn new(m: usize) -> Self {
        assert!(m >= 1, "need at least one component");
        PoissonMixture { m }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    fn s1(s: &StatVector, j: usize) -> f64 {
        s.as_slice()[2 * j]
    }

    fn s2(s: &StatVector, j: usize) -> f64 {
        s.as_slice()[2 * j + 1]
    }

    /// Per-component log of `omega_j * lambda_j^y * exp(-lambda_j)`; the
    /// `1/y!` factor is common to all components and handled separately.
    fn component_logits(&self, y: u64, params: &PoissonMixtureParams) -> DVector<f64> {
        let yf = y as f64;
        DVector::from_fn(self.m, |j, _| {
            let l = params.lambda[j];
            params.omega[j].ln() + yf * l.ln() - l
        })
    }

    /// Posterior probabilities of the mixture components given a count.
    /// Computed with a max-log shift so that large counts neither overflow
    /// nor underflow.
    pub fn posterior_weights(&self, y: u64, params: &PoissonMixtureParams) -> DVector<f64> {
        let logits = self.component_logits(y, params);
        let max = logits.max();
        let mut w = logits.map(|l| (l - max).exp());
        let total: f64 = w.iter().sum();
        w /= total;
        w
    }

    /// Complete-data Fisher information matrix in free coordinates
    /// `(omega_1..omega_{m-1}, lambda_1..lambda_m)`: block diagonal with
    /// weight block `diag(1/omega_j) + (1/omega_m) 11^T` and intensity block
    /// `diag(omega_j / lambda_j)`.
    pub fn complete_fim(&self, params: &PoissonMixtureParams) -> DMatrix<f64> {
        let m = self.m;
        let d = 2 * m - 1;
        let mut fim = DMatrix::zeros(d, d);
        let inv_last = 1.0 / params.omega[m - 1];
        for a in 0..m - 1 {
            for b in 0..m - 1 {
                fim[(a, b)] = inv_last;
            }
            fim[(a, a)] += 1.0 / params.omega[a];
        }
        for j in 0..m {
            fim[(m - 1 + j, m - 1 + j)] = params.omega[j] / params.lambda[j];
        }
        fim
    }

    /// Draws one observation: a component from `Categorical(omega)`, then a
    /// count from the selected Poisson. Also returns the component index.
    pub fn sample_labeled<R: Rng + ?Sized>(
        &self,
        params: &PoissonMixtureParams,
        rng: &mut R,
    ) -> (u64, usize) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut w = self.m - 1;
        for j in 0..self.m {
            acc += params.omega[j];
            if u < acc {
                w = j;
                break;
            }
        }
        (sample_poisson(params.lambda[w], rng), w)
    }

    pub fn sample<R: Rng + ?Sized>(&self, params: &PoissonMixtureParams, rng: &mut R) -> u64 {
        self.sample_labeled(params, rng).0
    }
}

/// Threshold between exact CDF inversion and the rejection sampler.
const POISSON_INVERSION_MAX: f64 = 30.0;

/// Poisson draw: exact sequential CDF inversion below intensity 30,
/// `rand_distr`'s rejection sampler above.
pub fn sample_poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    assert!(lambda > 0.0 && lambda.is_finite());
    if lambda < POISSON_INVERSION_MAX {
        let u: f64 = rng.random();
        let mut k = 0u64;
        let mut p = (-lambda).exp();
        let mut cdf = p;
        // Residual mass beyond the cap is below 1e-12 for lambda < 30.
        let k_max = (lambda + 12.0 * lambda.sqrt() + 60.0) as u64;
        while u > cdf && k < k_max {
            k += 1;
            p *= lambda / k as f64;
            cdf += p;
        }
        k
    } else {
        Poisson::new(lambda).expect("validated above").sample(rng) as u64
    }
}

impl LatentModel for PoissonMixture {
    type Obs = u64;
    type Params = PoissonMixtureParams;

    fn name(&self) -> &'static str {
        "poisson"
    }

    fn stat_dim(&self) -> usize {
        2 * self.m
    }

    fn stat_layout(&self) -> Layout {
        let names: Vec<String> = (1..=self.m)
            .flat_map(|j| [format!("s1_{j}"), format!("s2_{j}")])
            .collect();
        let pairs: Vec<(&str, usize)> = names.iter().map(|n| (n.as_str(), 1)).collect();
        Layout::new(&pairs)
    }

    fn param_dim(&self) -> usize {
        2 * self.m
    }

    fn param_layout(&self) -> Layout {
        let names: Vec<String> = (1..=self.m)
            .map(|j| format!("omega_{j}"))
            .chain((1..=self.m).map(|j| format!("lambda_{j}")))
            .collect();
        let pairs: Vec<(&str, usize)> = names.iter().map(|n| (n.as_str(), 1)).collect();
        Layout::new(&pairs)
    }

    fn free_dim(&self) -> usize {
        2 * self.m - 1
    }

    fn min_warmup(&self) -> usize {
        1
    }

    fn cond_expect_stat(&self, y: &u64, params: &PoissonMixtureParams) -> StatVector {
        let w = self.posterior_weights(*y, params);
        let yf = *y as f64;
        let mut vals = DVector::zeros(2 * self.m);
        for j in 0..self.m {
            vals[2 * j] = w[j];
            vals[2 * j + 1] = w[j] * yf;
        }
        StatVector::new(vals).expect("posterior statistics are finite")
    }

    fn in_domain(&self, s: &StatVector) -> bool {
        if s.dim() != 2 * self.m {
            return false;
        }
        let mut sum = 0.0;
        for j in 0..self.m {
            let s1 = Self::s1(s, j);
            let s2 = Self::s2(s, j);
            // Positivity plus the unit sum keeps every mass below one as
            // soon as there are two components.
            if !(s1 > 0.0 && s1 <= 1.0) || !(s2 > 0.0) {
                return false;
            }
            sum += s1;
        }
        // With one component the weight is identically one whatever the
        // accumulated mass, so no sum constraint applies.
        self.m == 1 || (sum - 1.0).abs() <= SIMPLEX_TOL
    }

    fn mstep(&self, s: &StatVector) -> Result<PoissonMixtureParams, ModelError> {
        if s.dim() != 2 * self.m {
            return Err(ModelError::Dimension {
                expected: 2 * self.m,
                got: s.dim(),
            });
        }
        let mut omega = vec![0.0; self.m];
        let mut lambda = vec![0.0; self.m];
        for j in 0..self.m {
            let s1 = Self::s1(s, j);
            let s2 = Self::s2(s, j);
            if !(s1 > 0.0 && s1 <= 1.0) {
                return Err(ModelError::OutOfDomain(format!(
                    "posterior mass s1_{} = {s1} outside (0, 1]",
                    j + 1
                )));
            }
            if s2 <= 0.0 {
                return Err(ModelError::DegenerateComponent {
                    component: j + 1,
                    reason: format!("weighted count s2 = {s2} would give a zero intensity"),
                });
            }
            // The single-component simplex is the point omega = 1; the
            // maximiser then divides out the accumulated mass.
            omega[j] = if self.m == 1 { 1.0 } else { s1 };
            lambda[j] = s2 / s1;
        }
        PoissonMixtureParams::new(&omega, &lambda)
    }

    fn loglik(&self, y: &u64, params: &PoissonMixtureParams) -> f64 {
        let logits = self.component_logits(*y, params);
        let max = logits.max();
        let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        max + sum.ln() - libm::lgamma(*y as f64 + 1.0)
    }

    fn params_to_vec(&self, params: &PoissonMixtureParams) -> DVector<f64> {
        let mut v = DVector::zeros(2 * self.m);
        v.rows_mut(0, self.m).copy_from(&params.omega);
        v.rows_mut(self.m, self.m).copy_from(&params.lambda);
        v
    }

    fn to_free(&self, params: &PoissonMixtureParams) -> DVector<f64> {
        let mut v = DVector::zeros(2 * self.m - 1);
        for a in 0..self.m - 1 {
            v[a] = params.omega[a];
        }
        for j in 0..self.m {
            v[self.m - 1 + j] = params.lambda[j];
        }
        v
    }

    fn from_free(&self, free: &DVector<f64>) -> Result<PoissonMixtureParams, ModelError> {
        if free.len() != 2 * self.m - 1 {
            return Err(ModelError::Dimension {
                expected: 2 * self.m - 1,
                got: free.len(),
            });
        }
        let mut omega = vec![0.0; self.m];
        let mut head = 0.0;
        for a in 0..self.m - 1 {
            omega[a] = free[a];
            head += free[a];
        }
        omega[self.m - 1] = 1.0 - head;
        let lambda: Vec<f64> = (0..self.m).map(|j| free[self.m - 1 + j]).collect();
        PoissonMixtureParams::new(&omega, &lambda)
    }

    fn score_from_stats(&self, s: &StatVector, params: &PoissonMixtureParams) -> DVector<f64> {
        let m = self.m;
        let mut g = DVector::zeros(2 * m - 1);
        let s1_last = Self::s1(s, m - 1);
        for a in 0..m - 1 {
            g[a] = Self::s1(s, a) / params.omega[a] - s1_last / params.omega[m - 1];
        }
        for j in 0..m {
            g[m - 1 + j] = Self::s2(s, j) / params.lambda[j] - Self::s1(s, j);
        }
        g
    }

    fn cond_complete_info(&self, y: &u64, params: &PoissonMixtureParams) -> DMatrix<f64> {
        let m = self.m;
        let d = 2 * m - 1;
        let w = self.posterior_weights(*y, params);
        let yf = *y as f64;
        let mut info = DMatrix::zeros(d, d);
        let last = w[m - 1] / (params.omega[m - 1] * params.omega[m - 1]);
        for a in 0..m - 1 {
            for b in 0..m - 1 {
                info[(a, b)] = last;
            }
            info[(a, a)] += w[a] / (params.omega[a] * params.omega[a]);
        }
        for j in 0..m {
            info[(m - 1 + j, m - 1 + j)] = w[j] * yf / (params.lambda[j] * params.lambda[j]);
        }
        info
    }
}
