//! Model-agnostic contract for latent-data models and the step-size
//! machinery shared by every estimator.
//!
//! A model is anything whose complete-data likelihood is an exponential
//! family in a statistic vector `S(x)`: the E-step reduces to computing the
//! conditional expectation of `S` given an observation, and the M-step to a
//! closed-form map from averaged statistics back to parameters. Everything
//! the generic estimators need is captured by [`LatentModel`]; concrete
//! models live in [`crate::poisson`] and [`crate::regmix`].

use nalgebra::{DMatrix, DVector};

use crate::error::ModelError;

/// One named block of a flat statistic or parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Describes how a flat vector decomposes into named blocks. Used to label
/// CSV columns and to slice statistic vectors per component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    blocks: Vec<Block>,
    dim: usize,
}

impl Layout {
    /// Builds a layout from `(name, len)` pairs laid out contiguously.
    pub fn new(blocks: &[(&str, usize)]) -> Self {
        let mut out = Vec::with_capacity(blocks.len());
        let mut offset = 0;
        for (name, len) in blocks {
            out.push(Block {
                name: (*name).to_string(),
                offset,
                len: *len,
            });
            offset += len;
        }
        Layout {
            blocks: out,
            dim: offset,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    /// One label per coordinate: the block name for scalar blocks,
    /// `name_i` for longer ones.
    pub fn labels(&self) -> Vec<String> {
        let mut labels = Vec::with_capacity(self.dim);
        for b in &self.blocks {
            if b.len == 1 {
                labels.push(b.name.clone());
            } else {
                for i in 0..b.len {
                    labels.push(format!("{}_{}", b.name, i));
                }
            }
        }
        labels
    }
}

/// Flat vector of complete-data sufficient statistics; the running state
/// `s_hat` of the online algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct StatVector {
    values: DVector<f64>,
}

impl StatVector {
    pub fn new(values: DVector<f64>) -> Result<Self, ModelError> {
        if !values.iter().all(|v| v.is_finite()) {
            return Err(ModelError::NonFinite("statistic vector".into()));
        }
        Ok(StatVector { values })
    }

    pub fn from_slice(values: &[f64]) -> Result<Self, ModelError> {
        Self::new(DVector::from_column_slice(values))
    }

    pub fn zeros(dim: usize) -> Self {
        StatVector {
            values: DVector::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values.as_slice()
    }
}

/// Convex combination `(1 - gamma) * s + gamma * sbar`, the stochastic
/// approximation E-step. `gamma = 1` replaces `s` by `sbar` outright.
pub fn blend_stats(
    s: &StatVector,
    sbar: &StatVector,
    gamma: f64,
) -> Result<StatVector, ModelError> {
    if s.dim() != sbar.dim() {
        return Err(ModelError::Dimension {
            expected: s.dim(),
            got: sbar.dim(),
        });
    }
    assert!(
        gamma > 0.0 && gamma <= 1.0,
        "blend weight must lie in (0, 1], got {gamma}"
    );
    let values = (1.0 - gamma) * &s.values + gamma * &sbar.values;
    StatVector::new(values)
}

/// Decreasing step-size law `gamma_n = gamma0 * n^(-alpha)`.
///
/// `alpha` is restricted to `(1/2, 1]` so that the step sizes are square
/// summable but not summable, and `gamma0` to `(0, 1]` so every step stays a
/// convex blend.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    gamma0: f64,
    alpha: f64,
}

impl StepSchedule {
    pub fn new(gamma0: f64, alpha: f64) -> Result<Self, ModelError> {
        if !(gamma0 > 0.0 && gamma0 <= 1.0) {
            return Err(ModelError::InvalidParameter(format!(
                "gamma0 must lie in (0, 1], got {gamma0}"
            )));
        }
        if !(alpha > 0.5 && alpha <= 1.0) {
            return Err(ModelError::InvalidParameter(format!(
                "alpha must lie in (1/2, 1], got {alpha}"
            )));
        }
        Ok(StepSchedule { gamma0, alpha })
    }

    pub fn gamma0(&self) -> f64 {
        self.gamma0
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Step size for iteration `n >= 1`.
    pub fn gamma(&self, n: usize) -> f64 {
        assert!(n >= 1, "step index must be >= 1");
        self.gamma0 * (n as f64).powf(-self.alpha)
    }
}

/// Contract every latent-data model implements for the generic estimators
/// and the asymptotics toolkit.
///
/// All methods are pure; implementations hold structural constants only
/// (component count, regressor dimension), never fitted state.
///
/// Two parameter representations coexist:
/// * the flat vector from [`params_to_vec`](LatentModel::params_to_vec),
///   used for trajectories, averaging and CSV output;
/// * the *free* coordinates from [`to_free`](LatentModel::to_free), with the
///   redundant mixture weight eliminated, used for scores, information
///   matrices and finite differencing.
pub trait LatentModel {
    /// Observation type consumed by the E-step.
    type Obs;
    /// Validated parameter type.
    type Params: Clone;

    fn name(&self) -> &'static str;

    /// Dimension of the sufficient-statistic vector.
    fn stat_dim(&self) -> usize;
    fn stat_layout(&self) -> Layout;

    /// Dimension of the flat parameter vector.
    fn param_dim(&self) -> usize;
    fn param_layout(&self) -> Layout;

    /// Dimension of the free (unconstrained-count) parametrisation.
    fn free_dim(&self) -> usize;

    /// Smallest warmup length that makes unassisted domain entry likely
    /// when no initial statistic is supplied.
    fn min_warmup(&self) -> usize;

    /// Conditional expectation of the complete-data sufficient statistic
    /// given one observation (the per-observation E-step).
    fn cond_expect_stat(&self, y: &Self::Obs, params: &Self::Params) -> StatVector;

    /// Whether `s` lies in the open convex set on which the M-step map is
    /// well defined.
    fn in_domain(&self, s: &StatVector) -> bool;

    /// M-step map from statistics to the maximising parameter.
    fn mstep(&self, s: &StatVector) -> Result<Self::Params, ModelError>;

    /// Log-density of one observation under the (incomplete-data) model.
    fn loglik(&self, y: &Self::Obs, params: &Self::Params) -> f64;

    fn params_to_vec(&self, params: &Self::Params) -> DVector<f64>;

    fn to_free(&self, params: &Self::Params) -> DVector<f64>;
    fn from_free(&self, free: &DVector<f64>) -> Result<Self::Params, ModelError>;

    /// Observed-data score in free coordinates, assembled from the
    /// conditional statistic expectation. Feeding the output of
    /// [`cond_expect_stat`](LatentModel::cond_expect_stat) here evaluates
    /// the score of `loglik` without any differentiation.
    fn score_from_stats(&self, s: &StatVector, params: &Self::Params) -> DVector<f64>;

    /// Observed-data score for one observation.
    fn score(&self, y: &Self::Obs, params: &Self::Params) -> DVector<f64> {
        self.score_from_stats(&self.cond_expect_stat(y, params), params)
    }

    /// Negated conditional expectation of the complete-data log-likelihood
    /// Hessian given `y`, in free coordinates.
    fn cond_complete_info(&self, y: &Self::Obs, params: &Self::Params) -> DMatrix<f64>;
}

/// Average of the normalised per-observation log-likelihood over a dataset.
pub fn mean_loglik<M: LatentModel>(model: &M, data: &[M::Obs], params: &M::Params) -> f64 {
    let mut acc = 0.0;
    for y in data {
        acc += model.loglik(y, params);
    }
    acc / data.len() as f64
}
