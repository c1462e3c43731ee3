//! Shared helpers for the integration tests: finite-difference oracles and
//! randomised parameter generators, kept independent of the library's own
//! differencing utilities.

// Each test target compiles this module separately and uses a subset.
#![allow(dead_code)]

use nalgebra::DVector;
use rand::Rng;

use online_em::poisson::PoissonMixtureParams;
use online_em::regmix::{RegMixParams, RegObservation};

/// Central-difference gradient with per-coordinate relative steps.
pub fn fd_gradient<F: Fn(&DVector<f64>) -> f64>(
    f: F,
    at: &DVector<f64>,
    step_rel: f64,
) -> DVector<f64> {
    let d = at.len();
    let mut g = DVector::zeros(d);
    for i in 0..d {
        let h = step_rel * at[i].abs().max(1.0);
        let mut plus = at.clone();
        let mut minus = at.clone();
        plus[i] += h;
        minus[i] -= h;
        g[i] = (f(&plus) - f(&minus)) / (2.0 * h);
    }
    g
}

/// Random interior simplex point with all entries at least `floor`.
pub fn random_simplex<R: Rng>(rng: &mut R, m: usize, floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..m).map(|_| floor + rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

pub fn random_poisson_params<R: Rng>(rng: &mut R, m: usize) -> PoissonMixtureParams {
    let omega = random_simplex(rng, m, 0.15);
    let lambda: Vec<f64> = (0..m).map(|_| 0.3 + 7.7 * rng.random::<f64>()).collect();
    PoissonMixtureParams::new(&omega, &lambda).unwrap()
}

pub fn random_regmix_params<R: Rng>(rng: &mut R, m: usize, d_z: usize) -> RegMixParams {
    let omega = random_simplex(rng, m, 0.2);
    let beta: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..d_z).map(|_| -3.0 + 6.0 * rng.random::<f64>()).collect())
        .collect();
    let sigma2: Vec<f64> = (0..m).map(|_| 0.5 + 3.5 * rng.random::<f64>()).collect();
    RegMixParams::new(&omega, &beta, &sigma2).unwrap()
}

pub fn random_reg_obs<R: Rng>(rng: &mut R, d_z: usize) -> RegObservation {
    let z: Vec<f64> = std::iter::once(1.0)
        .chain((1..d_z).map(|_| -4.0 + 8.0 * rng.random::<f64>()))
        .collect();
    let r = -10.0 + 20.0 * rng.random::<f64>();
    RegObservation::new(r, &z).unwrap()
}
