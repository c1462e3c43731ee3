//! Poisson-mixture properties: log-domain stability of the posterior,
//! finite-difference verification of the complete-data information matrix,
//! parameter validity of the online recursion, and its relation to the
//! information-weighted gradient recursion.

mod common;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use online_em::asymptotics::{complete_fim_pi, fd_hessian, Empirical, PoissonExactLaw};
use online_em::estimators::{online_em_step, titterington_step_poisson};
use online_em::model::{LatentModel, StatVector};
use online_em::poisson::{PoissonMixture, PoissonMixtureParams};
use online_em::simgen::{gen_poisson_mixture, SeededStream};

/// Posterior weights stay normalised for counts up to one million: the
/// log-domain shift prevents the power terms from overflowing.
#[test]
fn posterior_normalised_at_extreme_counts() {
    let model = PoissonMixture::new(3);
    let theta = PoissonMixtureParams::new(&[0.2, 0.5, 0.3], &[0.4, 17.0, 900.0]).unwrap();
    for y in [0u64, 1, 10, 1_000, 50_000, 1_000_000] {
        let w = model.posterior_weights(y, &theta);
        let sum: f64 = w.iter().sum();
        assert!(
            (sum - 1.0).abs() < 1e-12,
            "y={y}: sum {sum}, weights {w:?}"
        );
        assert!(w.iter().all(|v| v.is_finite() && *v >= 0.0));
    }
}

/// Exact-summation oracle for the complete-data information matrix: the
/// negated expected complete-data log-likelihood, with the expectation taken
/// by exact summation over the label and truncated summation over the count,
/// must have the closed-form matrix as its Hessian.
#[test]
fn complete_fim_matches_finite_difference_hessian() {
    let model = PoissonMixture::new(2);
    let theta = PoissonMixtureParams::new(&[0.4, 0.6], &[1.5, 5.0]).unwrap();

    // Per-component truncated supports with tail mass below 1e-12.
    let supports: Vec<Vec<(u64, f64)>> = (0..2)
        .map(|j| {
            let lambda = theta.lambda()[j];
            let mut p = (-lambda).exp();
            let mut out = vec![(0u64, p)];
            let mut total = p;
            let mut y = 0u64;
            while total < 1.0 - 1e-12 {
                y += 1;
                p *= lambda / y as f64;
                out.push((y, p));
                total += p;
            }
            out
        })
        .collect();

    // F(theta') = -E_theta[log f(Y, W; theta')], dropping the log y! term
    // which does not depend on theta'.
    let objective = |free: &DVector<f64>| {
        let cand = model.from_free(free).unwrap();
        let mut acc = 0.0;
        for j in 0..2 {
            let coeff = cand.omega()[j].ln() - cand.lambda()[j];
            let log_l = cand.lambda()[j].ln();
            for (y, w) in &supports[j] {
                acc -= theta.omega()[j] * w * (coeff + *y as f64 * log_l);
            }
        }
        acc
    };

    let hess = fd_hessian(objective, &model.to_free(&theta), 1e-4);
    let fim = model.complete_fim(&theta);
    let err = (&hess - &fim).norm() / fim.norm();
    assert!(err < 1e-4, "relative error {err}");
}

/// At a matched evaluation point the data-averaged conditional complete
/// information coincides with the closed-form complete-data matrix: exactly
/// under the exact law, within Monte-Carlo error under sampling.
#[test]
fn complete_fim_pi_matches_closed_form_at_truth() {
    let model = PoissonMixture::new(2);
    let theta = PoissonMixtureParams::new(&[0.35, 0.65], &[1.0, 4.0]).unwrap();

    let law = PoissonExactLaw::new(&theta, 1e-12);
    let exact = complete_fim_pi(&model, &law, &theta);
    let fim = model.complete_fim(&theta);
    let err = (&exact.matrix - &fim).norm() / fim.norm();
    assert!(err < 1e-9, "exact-summation error {err}");
    assert!(exact.full_rank);

    let data: Vec<u64> = gen_poisson_mixture(200_000, &theta, &SeededStream::new(31, 0))
        .into_iter()
        .map(|(y, _)| y)
        .collect();
    let sampled = complete_fim_pi(&model, &Empirical(&data), &theta);
    let err = (&sampled.matrix - &fim).norm() / fim.norm();
    assert!(err < 0.02, "Monte-Carlo error {err}");
}

/// Single component: the conditional complete information reduces to y over
/// lambda squared, so any matched expectation gives one over lambda.
#[test]
fn complete_fim_pi_single_component() {
    let model = PoissonMixture::new(1);
    let theta = PoissonMixtureParams::new(&[1.0], &[2.5]).unwrap();
    let law = PoissonExactLaw::new(&theta, 1e-12);
    let est = complete_fim_pi(&model, &law, &theta);
    assert!((est.matrix[(0, 0)] - 1.0 / 2.5).abs() < 1e-10);
}

/// 1e5 random online steps: the re-estimated parameter always satisfies the
/// constraints and the statistic stays in the domain, for arbitrary counts.
#[test]
fn online_step_preserves_validity() {
    let mut rng = ChaCha20Rng::seed_from_u64(77);
    let model = PoissonMixture::new(2);
    for trial in 0..100_000 {
        let theta = common::random_poisson_params(&mut rng, 2);
        let w = common::random_simplex(&mut rng, 2, 0.02);
        let s = StatVector::from_slice(&[
            w[0],
            w[0] * (0.1 + 12.0 * rng.random::<f64>()),
            w[1],
            w[1] * (0.1 + 12.0 * rng.random::<f64>()),
        ])
        .unwrap();
        let y: u64 = rng.random::<u64>() % 40;
        // gamma < 1: a unit step with y = 0 legitimately leaves the domain.
        let gamma = 0.02 + 0.97 * rng.random::<f64>();
        let (s_next, theta_next) =
            online_em_step(&model, &s, &theta, &y, gamma, false).unwrap_or_else(|e| {
                panic!("trial {trial} failed: {e} (y={y}, gamma={gamma})")
            });
        assert!(model.in_domain(&s_next), "trial {trial} left the domain");
        assert!(theta_next.lambda().iter().all(|&l| l > 0.0));
        assert!(theta_next.omega().iter().all(|&w| w > 0.0 && w < 1.0));
        let wsum: f64 = theta_next.omega().iter().sum();
        assert!((wsum - 1.0).abs() < 1e-12);
    }
}

/// The weight updates of the two recursions are the same affine map written
/// in two forms; from a matched state they agree to fifteen digits.
#[test]
fn weight_updates_agree_over_random_steps() {
    let mut rng = ChaCha20Rng::seed_from_u64(78);
    let model = PoissonMixture::new(2);
    for _ in 0..100_000 {
        let theta = common::random_poisson_params(&mut rng, 2);
        // Matched state: masses equal to the current weights.
        let s = StatVector::from_slice(&[
            theta.omega()[0],
            theta.omega()[0] * (0.1 + 10.0 * rng.random::<f64>()),
            theta.omega()[1],
            theta.omega()[1] * (0.1 + 10.0 * rng.random::<f64>()),
        ])
        .unwrap();
        let y: u64 = rng.random::<u64>() % 40;
        let gamma = 0.02 + 0.97 * rng.random::<f64>();
        let (s_next, _) = online_em_step(&model, &s, &theta, &y, gamma, false).unwrap();
        let upd = titterington_step_poisson(&theta, y, gamma);
        for j in 0..2 {
            let a = s_next.as_slice()[2 * j];
            let b = upd.omega[j];
            // Agreement is relative to the operand scale: when the update
            // nearly cancels the old weight, both forms keep absolute
            // accuracy at the scale of the weights, not of the result.
            let scale = a.abs().max(b.abs()).max(theta.omega()[j]);
            assert!((a - b).abs() <= 1e-15 * scale, "omega_{j}: {a} vs {b}");
        }
    }
}

/// Over the same random steps the online EM intensities stay positive while
/// the weighted gradient recursion is driven negative by the documented
/// input.
#[test]
fn online_em_keeps_intensities_positive_where_gradient_recursion_fails() {
    let mut rng = ChaCha20Rng::seed_from_u64(79);
    let model = PoissonMixture::new(2);
    for _ in 0..100_000 {
        let theta = common::random_poisson_params(&mut rng, 2);
        let w = common::random_simplex(&mut rng, 2, 0.02);
        let s = StatVector::from_slice(&[
            w[0],
            w[0] * (0.1 + 12.0 * rng.random::<f64>()),
            w[1],
            w[1] * (0.1 + 12.0 * rng.random::<f64>()),
        ])
        .unwrap();
        let y: u64 = rng.random::<u64>() % 40;
        let gamma = 0.02 + 0.97 * rng.random::<f64>();
        let (_, theta_next) = online_em_step(&model, &s, &theta, &y, gamma, false).unwrap();
        assert!(theta_next.lambda().iter().all(|&l| l > 0.0));
    }

    let theta = PoissonMixtureParams::new(&[0.5, 0.5], &[1.0, 2.0]).unwrap();
    let upd = titterington_step_poisson(&theta, 0, 0.8);
    assert!(!upd.valid);
    assert!(upd.lambda[0] < 0.0);
}
