//! Mixture of `m` Gaussian linear regressions.
//!
//! Given the latent class `W = j` and regressors `Z`, the response `R` is
//! normal with mean `beta_j' Z` and variance `sigma_j^2`; the marginal law
//! of `Z` is left unspecified, so only the conditional likelihood of `R`
//! given `Z` is modelled.
//!
//! Per component the sufficient statistics are the posterior mass, the
//! weighted cross-moment `r z`, the weighted design moment `z z'` and the
//! weighted square `r^2`, stored flat as
//! `[s1_j, s2_j (d_z), s3_j (d_z^2, row major), s4_j]` per component. The
//! M-step solves the per-component weighted normal equations, which is well
//! posed exactly when every bordered moment matrix
//! `M_j = [[s3_j, s2_j], [s2_j', s4_j]]` is positive definite: the noise
//! variance is (up to the mass normalisation) the Schur complement of
//! `s3_j` in `M_j`, hence automatically positive on that domain.
//!
//! A single observation contributes a rank-one `s3_j`, so raw E-step output
//! is never in the domain for `d_z >= 2`; domain entry happens by blending
//! several observations (the warmup phase).

use nalgebra::{DMatrix, DVector};

use crate::error::ModelError;
use crate::model::{LatentModel, Layout, StatVector};

const SIMPLEX_TOL: f64 = 1e-12;
/// Relative pivot threshold of the positive definiteness test.
const PIVOT_TOL: f64 = 1e-12;

/// One observation: scalar response and regressor vector.
#[derive(Debug, Clone, PartialEq)]
pub struct RegObservation {
    pub r: f64,
    pub z: DVector<f64>,
}

impl RegObservation {
    pub fn new(r: f64, z: &[f64]) -> Result<Self, ModelError> {
        if !r.is_finite() || z.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite("regression observation".into()));
        }
        Ok(RegObservation {
            r,
            z: DVector::from_column_slice(z),
        })
    }
}

/// Mixture weights, per-component regression vectors and noise variances.
#[derive(Debug, Clone, PartialEq)]
pub struct RegMixParams {
    omega: DVector<f64>,
    beta: Vec<DVector<f64>>,
    sigma2: DVector<f64>,
}

impl RegMixParams {
    pub fn new(omega: &[f64], beta: &[Vec<f64>], sigma2: &[f64]) -> Result<Self, ModelError> {
        let m = omega.len();
        if m == 0 || beta.len() != m || sigma2.len() != m {
            return Err(ModelError::Dimension {
                expected: m.max(1),
                got: beta.len().min(sigma2.len()),
            });
        }
        let d_z = beta[0].len();
        if beta.iter().any(|b| b.len() != d_z) {
            return Err(ModelError::Dimension {
                expected: d_z,
                got: beta.iter().map(|b| b.len()).find(|&l| l != d_z).unwrap_or(0),
            });
        }
        let finite = omega.iter().chain(sigma2.iter()).all(|v| v.is_finite())
            && beta.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(ModelError::NonFinite("regression mixture parameters".into()));
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
        if sigma2.iter().any(|&v| v <= 0.0) {
            return Err(ModelError::InvalidParameter(
                "noise variances must be strictly positive".into(),
            ));
        }
        Ok(RegMixParams {
            omega: DVector::from_column_slice(omega),
            beta: beta.iter().map(|b| DVector::from_column_slice(b)).collect(),
            sigma2: DVector::from_column_slice(sigma2),
        })
    }

    pub fn m(&self) -> usize {
        self.omega.len()
    }

    pub fn d_z(&self) -> usize {
        self.beta[0].len()
    }

    pub fn omega(&self) -> &DVector<f64> {
        &self.omega
    }

    pub fn beta(&self, j: usize) -> &DVector<f64> {
        &self.beta[j]
    }

    pub fn sigma2(&self) -> &DVector<f64> {
        &self.sigma2
    }
}

/// The model itself carries the component count and regressor dimension.
#[derive(Debug, Clone, Copy)]
pub struct RegressionMixture {
    m: usize,
    d_z: usize,
}

/// Pivoted Cholesky test: positive definite iff every pivot stays above
/// `PIVOT_TOL` times the mean diagonal scale.
fn is_positive_definite(mat: &DMatrix<f64>) -> bool {
    let d = mat.nrows();
    let scale = mat.trace() / d as f64;
    if !(scale > 0.0) || !scale.is_finite() {
        return false;
    }
    let tol = PIVOT_TOL * scale;
    let mut l = DMatrix::<f64>::zeros(d, d);
    for k in 0..d {
        let mut pivot = mat[(k, k)];
        for i in 0..k {
            pivot -= l[(k, i)] * l[(k, i)];
        }
        if !(pivot > tol) {
            return false;
        }
        let lkk = pivot.sqrt();
        l[(k, k)] = lkk;
        for r in k + 1..d {
            let mut v = mat[(r, k)];
            for i in 0..k {
                v -= l[(r, i)] * l[(k, i)];
            }
            l[(r, k)] = v / lkk;
        }
    }
    true
}

impl RegressionMixture {
    pub fn new(m: usize, d_z: usize) -> Self {
        assert!(m >= 1 && d_z >= 1);
        RegressionMixture { m, d_z }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d_z(&self) -> usize {
        self.d_z
    }

    /// Length of one component's statistics block.
    fn stride(&self) -> usize {
        2 + self.d_z + self.d_z * self.d_z
    }

    fn s1(&self, s: &StatVector, j: usize) -> f64 {
        s.as_slice()[j * self.stride()]
    }

    fn s2(&self, s: &StatVector, j: usize) -> DVector<f64> {
        let off = j * self.stride() + 1;
        DVector::from_column_slice(&s.as_slice()[off..off + self.d_z])
    }

    fn s3(&self, s: &StatVector, j: usize) -> DMatrix<f64> {
        let off = j * self.stride() + 1 + self.d_z;
        DMatrix::from_row_slice(
            self.d_z,
            self.d_z,
            &s.as_slice()[off..off + self.d_z * self.d_z],
        )
    }

    fn s4(&self, s: &StatVector, j: usize) -> f64 {
        s.as_slice()[(j + 1) * self.stride() - 1]
    }

    /// Bordered moment matrix `M_j = [[s3, s2], [s2', s4]]`.
    pub fn bordered_moment(&self, s: &StatVector, j: usize) -> DMatrix<f64> {
        let d = self.d_z;
        let mut m = DMatrix::zeros(d + 1, d + 1);
        m.view_mut((0, 0), (d, d)).copy_from(&self.s3(s, j));
        let s2 = self.s2(s, j);
        for i in 0..d {
            m[(i, d)] = s2[i];
            m[(d, i)] = s2[i];
        }
        m[(d, d)] = self.s4(s, j);
        m
    }

    fn gauss_logits(&self, obs: &RegObservation, params: &RegMixParams) -> DVector<f64> {
        DVector::from_fn(self.m, |j, _| {
            let resid = obs.r - params.beta[j].dot(&obs.z);
            params.omega[j].ln()
                - 0.5 * params.sigma2[j].ln()
                - 0.5 * resid * resid / params.sigma2[j]
        })
    }

    /// Posterior class probabilities given one observation, computed with a
    /// max-log shift.
    pub fn posterior_weights(&self, obs: &RegObservation, params: &RegMixParams) -> DVector<f64> {
        let logits = self.gauss_logits(obs, params);
        let max = logits.max();
        let mut w = logits.map(|l| (l - max).exp());
        let total: f64 = w.iter().sum();
        w /= total;
        w
    }

    /// Per-component observed-data score with respect to the regression
    /// vectors only: row `j` is `wbar_j (r - beta_j' z) z / sigma_j^2`.
    pub fn score_beta(&self, obs: &RegObservation, params: &RegMixParams) -> DMatrix<f64> {
        let w = self.posterior_weights(obs, params);
        let mut out = DMatrix::zeros(self.m, self.d_z);
        for j in 0..self.m {
            let resid = obs.r - params.beta[j].dot(&obs.z);
            let coeff = w[j] * resid / params.sigma2[j];
            for k in 0..self.d_z {
                out[(j, k)] = coeff * obs.z[k];
            }
        }
        out
    }
}

impl LatentModel for RegressionMixture {
    type Obs = RegObservation;
    type Params = RegMixParams;

    fn name(&self) -> &'static str {
        "regmix"
    }

    fn stat_dim(&self) -> usize {
        self.m * self.stride()
    }

    fn stat_layout(&self) -> Layout {
        let mut names = Vec::new();
        for j in 1..=self.m {
            names.push((format!("s1_{j}"), 1));
            names.push((format!("s2_{j}"), self.d_z));
            names.push((format!("s3_{j}"), self.d_z * self.d_z));
            names.push((format!("s4_{j}"), 1));
        }
        let pairs: Vec<(&str, usize)> = names.iter().map(|(n, l)| (n.as_str(), *l)).collect();
        Layout::new(&pairs)
    }

    fn param_dim(&self) -> usize {
        self.m * (2 + self.d_z)
    }

    fn param_layout(&self) -> Layout {
        let mut names = Vec::new();
        for j in 1..=self.m {
            names.push((format!("omega_{j}"), 1));
        }
        for j in 1..=self.m {
            names.push((format!("beta_{j}"), self.d_z));
        }
        for j in 1..=self.m {
            names.push((format!("sigma2_{j}"), 1));
        }
        let pairs: Vec<(&str, usize)> = names.iter().map(|(n, l)| (n.as_str(), *l)).collect();
        Layout::new(&pairs)
    }

    fn free_dim(&self) -> usize {
        self.m - 1 + self.m * self.d_z + self.m
    }

    fn min_warmup(&self) -> usize {
        self.d_z + 1
    }

    fn cond_expect_stat(&self, obs: &RegObservation, params: &RegMixParams) -> StatVector {
        let w = self.posterior_weights(obs, params);
        let mut vals = DVector::zeros(self.stat_dim());
        let d = self.d_z;
        for j in 0..self.m {
            let off = j * self.stride();
            vals[off] = w[j];
            for a in 0..d {
                vals[off + 1 + a] = w[j] * obs.r * obs.z[a];
            }
            for a in 0..d {
                for b in 0..d {
                    vals[off + 1 + d + a * d + b] = w[j] * obs.z[a] * obs.z[b];
                }
            }
            vals[off + 1 + d + d * d] = w[j] * obs.r * obs.r;
        }
        StatVector::new(vals).expect("statistics are finite")
    }

    fn in_domain(&self, s: &StatVector) -> bool {
        if s.dim() != self.stat_dim() {
            return false;
        }
        let mut sum = 0.0;
        for j in 0..self.m {
            let s1 = self.s1(s, j);
            if !(s1 > 0.0 && s1 <= 1.0) {
                return false;
            }
            sum += s1;
            if !is_positive_definite(&self.bordered_moment(s, j)) {
                return false;
            }
        }
        (sum - 1.0).abs() <= SIMPLEX_TOL
    }

    fn mstep(&self, s: &StatVector) -> Result<RegMixParams, ModelError> {
        if s.dim() != self.stat_dim() {
            return Err(ModelError::Dimension {
                expected: self.stat_dim(),
                got: s.dim(),
            });
        }
        let mut omega = vec![0.0; self.m];
        let mut beta = vec![vec![0.0; self.d_z]; self.m];
        let mut sigma2 = vec![0.0; self.m];
        for j in 0..self.m {
            let s1 = self.s1(s, j);
            if !(s1 > 0.0 && s1 <= 1.0) {
                return Err(ModelError::OutOfDomain(format!(
                    "posterior mass s1_{} = {s1} outside (0, 1]",
                    j + 1
                )));
            }
            if !is_positive_definite(&self.bordered_moment(s, j)) {
                return Err(ModelError::OutOfDomain(format!(
                    "bordered moment matrix of component {} is not positive definite",
                    j + 1
                )));
            }
            let s2 = self.s2(s, j);
            let s3 = self.s3(s, j);
            let chol = nalgebra::Cholesky::new(s3).ok_or_else(|| {
                ModelError::OutOfDomain(format!(
                    "design moment matrix of component {} failed factorisation",
                    j + 1
                ))
            })?;
            let b = chol.solve(&s2);
            let var = (self.s4(s, j) - b.dot(&s2)) / s1;
            if !(var > 0.0) {
                return Err(ModelError::DegenerateComponent {
                    component: j + 1,
                    reason: format!("non-positive variance {var}"),
                });
            }
            omega[j] = s1;
            beta[j] = b.iter().copied().collect();
            sigma2[j] = var;
        }
        RegMixParams::new(&omega, &beta, &sigma2)
    }

    fn loglik(&self, obs: &RegObservation, params: &RegMixParams) -> f64 {
        let logits = self.gauss_logits(obs, params);
        let max = logits.max();
        let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        max + sum.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }

    fn params_to_vec(&self, params: &RegMixParams) -> DVector<f64> {
        let mut v = DVector::zeros(self.param_dim());
        let mut k = 0;
        for j in 0..self.m {
            v[k] = params.omega[j];
            k += 1;
        }
        for j in 0..self.m {
            for a in 0..self.d_z {
                v[k] = params.beta[j][a];
                k += 1;
            }
        }
        for j in 0..self.m {
            v[k] = params.sigma2[j];
            k += 1;
        }
        v
    }

    fn to_free(&self, params: &RegMixParams) -> DVector<f64> {
        let mut v = DVector::zeros(self.free_dim());
        let mut k = 0;
        for j in 0..self.m - 1 {
            v[k] = params.omega[j];
            k += 1;
        }
        for j in 0..self.m {
            for a in 0..self.d_z {
                v[k] = params.beta[j][a];
                k += 1;
            }
        }
        for j in 0..self.m {
            v[k] = params.sigma2[j];
            k += 1;
        }
        v
    }

    fn from_free(&self, free: &DVector<f64>) -> Result<RegMixParams, ModelError> {
        if free.len() != self.free_dim() {
            return Err(ModelError::Dimension {
                expected: self.free_dim(),
                got: free.len(),
            });
        }
        let mut omega = vec![0.0; self.m];
        let mut head = 0.0;
        for j in 0..self.m - 1 {
            omega[j] = free[j];
            head += free[j];
        }
        omega[self.m - 1] = 1.0 - head;
        let mut k = self.m - 1;
        let mut beta = vec![vec![0.0; self.d_z]; self.m];
        for b in beta.iter_mut() {
            for v in b.iter_mut() {
                *v = free[k];
                k += 1;
            }
        }
        let sigma2: Vec<f64> = (0..self.m).map(|j| free[k + j]).collect();
        RegMixParams::new(&omega, &beta, &sigma2)
    }

    fn score_from_stats(&self, s: &StatVector, params: &RegMixParams) -> DVector<f64> {
        let mut g = DVector::zeros(self.free_dim());
        let mut k = 0;
        let s1_last = self.s1(s, self.m - 1);
        for a in 0..self.m - 1 {
            g[k] = self.s1(s, a) / params.omega[a] - s1_last / params.omega[self.m - 1];
            k += 1;
        }
        for j in 0..self.m {
            let s2 = self.s2(s, j);
            let s3 = self.s3(s, j);
            let grad = (&s2 - &s3 * &params.beta[j]) / params.sigma2[j];
            for a in 0..self.d_z {
                g[k] = grad[a];
                k += 1;
            }
        }
        for j in 0..self.m {
            let s2 = self.s2(s, j);
            let s3 = self.s3(s, j);
            let b = &params.beta[j];
            let quad = self.s4(s, j) - 2.0 * b.dot(&s2) + b.dot(&(&s3 * b));
            let v = params.sigma2[j];
            g[k] = -self.s1(s, j) / (2.0 * v) + quad / (2.0 * v * v);
            k += 1;
        }
        g
    }

    fn cond_complete_info(&self, obs: &RegObservation, params: &RegMixParams) -> DMatrix<f64> {
        let d = self.free_dim();
        let w = self.posterior_weights(obs, params);
        let mut info = DMatrix::zeros(d, d);
        let m = self.m;
        let last = w[m - 1] / (params.omega[m - 1] * params.omega[m - 1]);
        for a in 0..m - 1 {
            for b in 0..m - 1 {
                info[(a, b)] = last;
            }
            info[(a, a)] += w[a] / (params.omega[a] * params.omega[a]);
        }
        let beta_off = m - 1;
        let var_off = m - 1 + m * self.d_z;
        for j in 0..m {
            let v = params.sigma2[j];
            let resid = obs.r - params.beta[j].dot(&obs.z);
            let bj = beta_off + j * self.d_z;
            for a in 0..self.d_z {
                for b in 0..self.d_z {
                    info[(bj + a, bj + b)] = w[j] * obs.z[a] * obs.z[b] / v;
                }
                let cross = w[j] * resid * obs.z[a] / (v * v);
                info[(bj + a, var_off + j)] = cross;
                info[(var_off + j, bj + a)] = cross;
            }
            info[(var_off + j, var_off + j)] =
                w[j] * (resid * resid / (v * v * v) - 0.5 / (v * v));
        }
        info
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flexmix_like() -> (RegressionMixture, RegMixParams) {
        (
            RegressionMixture::new(2, 3),
            RegMixParams::new(
                &[0.5, 0.5],
                &[vec![0.0, 5.0, 0.0], vec![15.0, 10.0, -10.0]],
                &[81.0, 81.0],
            )
            .unwrap(),
        )
    }

    #[test]
    fn params_validation() {
        assert!(RegMixParams::new(&[0.5, 0.5], &[vec![1.0], vec![2.0]], &[1.0, 0.0]).is_err());
        assert!(RegMixParams::new(&[0.7, 0.5], &[vec![1.0], vec![2.0]], &[1.0, 1.0]).is_err());
        assert!(RegMixParams::new(&[1.0], &[vec![1.0, 2.0]], &[0.5]).is_ok());
    }

    #[test]
    fn posterior_single_component() {
        let model = RegressionMixture::new(1, 2);
        let p = RegMixParams::new(&[1.0], &[vec![1.0, -1.0]], &[2.0]).unwrap();
        let obs = RegObservation::new(0.3, &[1.0, 0.5]).unwrap();
        assert_eq!(model.posterior_weights(&obs, &p)[0], 1.0);
    }

    #[test]
    fn posterior_identical_components_split_evenly() {
        let model = RegressionMixture::new(2, 2);
        let p = RegMixParams::new(
            &[0.5, 0.5],
            &[vec![1.0, 2.0], vec![1.0, 2.0]],
            &[1.5, 1.5],
        )
        .unwrap();
        let obs = RegObservation::new(1.2, &[0.7, -0.2]).unwrap();
        let w = model.posterior_weights(&obs, &p);
        assert!((w[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn posterior_matches_gaussian_ratio() {
        // Residuals 0 and -2 with unit variances: w1 = 1 / (1 + e^{-2}).
        let model = RegressionMixture::new(2, 1);
        let p =
            RegMixParams::new(&[0.5, 0.5], &[vec![1.0], vec![3.0]], &[1.0, 1.0]).unwrap();
        let obs = RegObservation::new(1.0, &[1.0]).unwrap();
        let w = model.posterior_weights(&obs, &p);
        let expect = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((w[0] - expect).abs() < 1e-14);
        assert!((w[0] - 0.8808).abs() < 1e-4);
    }

    #[test]
    fn cond_expect_zero_response() {
        let (model, p) = flexmix_like();
        let obs = RegObservation::new(0.0, &[1.0, 2.0, 0.4]).unwrap();
        let s = model.cond_expect_stat(&obs, &p);
        for j in 0..2 {
            assert_eq!(model.s2(&s, j).as_slice(), &[0.0, 0.0, 0.0]);
            assert_eq!(model.s4(&s, j), 0.0);
            let w = model.posterior_weights(&obs, &p)[j];
            let s3 = model.s3(&s, j);
            assert!((s3[(1, 1)] - w * 4.0).abs() < 1e-15);
        }
    }

    #[test]
    fn cond_expect_scalar_regressor() {
        let model = RegressionMixture::new(1, 1);
        let p = RegMixParams::new(&[1.0], &[vec![0.4]], &[1.0]).unwrap();
        let obs = RegObservation::new(3.0, &[1.0]).unwrap();
        let s = model.cond_expect_stat(&obs, &p);
        assert_eq!(s.as_slice(), &[1.0, 3.0, 1.0, 9.0]);
    }

    #[test]
    fn cond_expect_s3_is_rank_one() {
        let (model, p) = flexmix_like();
        let obs = RegObservation::new(12.0, &[1.0, 4.0, 1.6]).unwrap();
        let s = model.cond_expect_stat(&obs, &p);
        for j in 0..2 {
            let s3 = model.s3(&s, j);
            // Rank one: every 2x2 minor vanishes.
            for a in 0..2 {
                for b in 0..2 {
                    let det = s3[(a, b)] * s3[(a + 1, b + 1)] - s3[(a, b + 1)] * s3[(a + 1, b)];
                    assert!(det.abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn raw_estep_output_is_out_of_domain() {
        let (model, p) = flexmix_like();
        let obs = RegObservation::new(12.0, &[1.0, 4.0, 1.6]).unwrap();
        let s = model.cond_expect_stat(&obs, &p);
        assert!(!model.in_domain(&s));
    }

    #[test]
    fn zero_mass_is_out_of_domain() {
        let model = RegressionMixture::new(2, 1);
        // s1_1 = 0.
        let s = StatVector::from_slice(&[0.0, 0.5, 1.0, 1.5, 1.0, 0.5, 1.0, 1.5]).unwrap();
        assert!(!model.in_domain(&s));
    }

    #[test]
    fn mstep_scalar_example() {
        let model = RegressionMixture::new(1, 1);
        let s = StatVector::from_slice(&[1.0, 2.0, 4.0, 1.5]).unwrap();
        let p = model.mstep(&s).unwrap();
        assert!((p.beta(0)[0] - 0.5).abs() < 1e-15);
        assert!((p.sigma2()[0] - 0.5).abs() < 1e-15);
        assert_eq!(p.omega()[0], 1.0);
    }

    #[test]
    fn mstep_rejects_rank_deficient_stats() {
        let (model, p) = flexmix_like();
        let obs = RegObservation::new(12.0, &[1.0, 4.0, 1.6]).unwrap();
        let s = model.cond_expect_stat(&obs, &p);
        assert!(matches!(model.mstep(&s), Err(ModelError::OutOfDomain(_))));
    }

    #[test]
    fn mstep_is_weighted_least_squares() {
        // m = 1: blending k observations uniformly must reproduce the
        // normal-equations solution assembled directly from the data.
        let model = RegressionMixture::new(1, 3);
        let p = RegMixParams::new(&[1.0], &[vec![0.0, 0.0, 0.0]], &[1.0]).unwrap();
        let data: Vec<RegObservation> = (0..10)
            .map(|i| {
                let u = 0.3 + 0.9 * i as f64;
                RegObservation::new(
                    1.5 - 2.0 * u + 0.3 * u * u + ((i * 37 % 11) as f64 - 5.0) * 0.1,
                    &[1.0, u, u * u],
                )
                .unwrap()
            })
            .collect();
        let mut acc = DVector::zeros(model.stat_dim());
        for obs in &data {
            acc += model.cond_expect_stat(obs, &p).values();
        }
        acc /= data.len() as f64;
        let s = StatVector::new(acc).unwrap();
        let fit = model.mstep(&s).unwrap();

        let mut xtx = DMatrix::<f64>::zeros(3, 3);
        let mut xtr = DVector::<f64>::zeros(3);
        for obs in &data {
            xtx += &obs.z * obs.z.transpose();
            xtr += &obs.z * obs.r;
        }
        let direct = xtx.lu().solve(&xtr).unwrap();
        for a in 0..3 {
            assert!((fit.beta(0)[a] - direct[a]).abs() < 1e-10);
        }
        let rss: f64 = data
            .iter()
            .map(|o| {
                let e = o.r - direct.dot(&o.z);
                e * e
            })
            .sum::<f64>()
            / data.len() as f64;
        assert!((fit.sigma2()[0] - rss).abs() < 1e-10);
    }

    #[test]
    fn mstep_fixed_point_at_exact_statistics() {
        // Statistics computed by exact integration over the latent class and
        // the noise, on a fixed design: the M-step must return the generating
        // parameter.
        let (model, p) = flexmix_like();
        let design: Vec<DVector<f64>> = (0..12)
            .map(|i| {
                let u = 0.25 + 0.8 * i as f64;
                DVector::from_column_slice(&[1.0, u, u * u / 10.0])
            })
            .collect();
        let mut vals = DVector::zeros(model.stat_dim());
        let k = design.len() as f64;
        for z in &design {
            for j in 0..2 {
                let off = j * model.stride();
                let mean = p.beta(j).dot(z);
                let w = p.omega()[j];
                vals[off] += w / k;
                for a in 0..3 {
                    vals[off + 1 + a] += w * mean * z[a] / k;
                }
                for a in 0..3 {
                    for b in 0..3 {
                        vals[off + 4 + a * 3 + b] += w * z[a] * z[b] / k;
                    }
                }
                vals[off + 13] += w * (mean * mean + p.sigma2()[j]) / k;
            }
        }
        let s = StatVector::new(vals).unwrap();
        assert!(model.in_domain(&s));
        let fit = model.mstep(&s).unwrap();
        for j in 0..2 {
            assert!((fit.omega()[j] - p.omega()[j]).abs() < 1e-12);
            for a in 0..3 {
                assert!((fit.beta(j)[a] - p.beta(j)[a]).abs() < 1e-9);
            }
            assert!((fit.sigma2()[j] - p.sigma2()[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn loglik_standard_normal_at_mode() {
        let model = RegressionMixture::new(1, 2);
        let p = RegMixParams::new(&[1.0], &[vec![2.0, -1.0]], &[1.0]).unwrap();
        let z = [0.5, 0.25];
        let r = 2.0 * 0.5 - 1.0 * 0.25;
        let obs = RegObservation::new(r, &z).unwrap();
        let expect = -0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((model.loglik(&obs, &p) - expect).abs() < 1e-14);
    }

    #[test]
    fn loglik_identical_components_collapse() {
        let single = RegressionMixture::new(1, 2);
        let ps = RegMixParams::new(&[1.0], &[vec![1.0, 2.0]], &[2.5]).unwrap();
        let double = RegressionMixture::new(2, 2);
        let pd = RegMixParams::new(
            &[0.5, 0.5],
            &[vec![1.0, 2.0], vec![1.0, 2.0]],
            &[2.5, 2.5],
        )
        .unwrap();
        let obs = RegObservation::new(0.7, &[1.0, -0.4]).unwrap();
        assert!((single.loglik(&obs, &ps) - double.loglik(&obs, &pd)).abs() < 1e-13);
    }

    #[test]
    fn loglik_matches_direct_density_sum() {
        let (model, p) = flexmix_like();
        let obs = RegObservation::new(30.0, &[1.0, 5.0, 2.5]).unwrap();
        let mut dens = 0.0;
        for j in 0..2 {
            let mean = p.beta(j).dot(&obs.z);
            let v = p.sigma2()[j];
            dens += p.omega()[j] * (-0.5 * (obs.r - mean) * (obs.r - mean) / v).exp()
                / (2.0 * std::f64::consts::PI * v).sqrt();
        }
        assert!((model.loglik(&obs, &p) - dens.ln()).abs() < 1e-12);
    }

    #[test]
    fn score_beta_zero_residuals() {
        let model = RegressionMixture::new(2, 2);
        let p = RegMixParams::new(
            &[0.5, 0.5],
            &[vec![1.0, 1.0], vec![1.0, 1.0]],
            &[1.0, 4.0],
        )
        .unwrap();
        let obs = RegObservation::new(1.5, &[1.0, 0.5]).unwrap();
        let sc = model.score_beta(&obs, &p);
        assert!(sc.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn score_beta_scalar_case() {
        let model = RegressionMixture::new(1, 1);
        let p = RegMixParams::new(&[1.0], &[vec![1.0]], &[1.0]).unwrap();
        let obs = RegObservation::new(3.0, &[1.0]).unwrap();
        let sc = model.score_beta(&obs, &p);
        assert!((sc[(0, 0)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn score_beta_agrees_with_assembled_score() {
        let (model, p) = flexmix_like();
        let obs = RegObservation::new(22.0, &[1.0, 3.0, 0.9]).unwrap();
        let sc = model.score_beta(&obs, &p);
        let full = model.score(&obs, &p);
        for j in 0..2 {
            for a in 0..3 {
                assert!((sc[(j, a)] - full[1 + j * 3 + a]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn free_round_trip() {
        let (model, p) = flexmix_like();
        let free = model.to_free(&p);
        assert_eq!(free.len(), 9);
        let back = model.from_free(&free).unwrap();
        assert_eq!(back, p);
    }
}
