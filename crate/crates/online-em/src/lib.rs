//! Online expectation-maximisation for exponential-family latent-data
//! models.
//!
//! The crate is organised around a model contract ([`model::LatentModel`])
//! under which the E-step reduces to conditional expectations of a
//! sufficient-statistic vector and the M-step to a closed-form map back to
//! parameters. On top of it sit:
//!
//! * [`estimators`] — batch EM, the online EM recursion with warmup and
//!   Polyak-Ruppert averaging, and the information-weighted gradient
//!   recursion for Poisson mixtures;
//! * [`poisson`] / [`regmix`] — Poisson mixtures and mixtures of Gaussian
//!   linear regressions;
//! * [`simgen`] — seeded, replica-addressable data generators;
//! * [`asymptotics`] — mean field, KL surrogate, information matrices,
//!   Lyapunov solves and asymptotic covariances.

pub mod asymptotics;
pub mod error;
pub mod estimators;
pub mod model;
pub mod poisson;
pub mod regmix;
pub mod simgen;

pub use error::{AsymptoticsError, EstimatorError, ModelError};
pub use model::{blend_stats, LatentModel, Layout, StatVector, StepSchedule};
