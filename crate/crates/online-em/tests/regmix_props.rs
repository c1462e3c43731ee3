//! Regression-mixture properties: domain entry and closure along the online
//! recursion, the weighted-least-squares reduction with one component, and
//! the ambiguity level of the simulation design.

mod common;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use online_em::estimators::{run_online_em, RunOptions};
use online_em::model::{blend_stats, LatentModel, StatVector, StepSchedule};
use online_em::regmix::{RegMixParams, RegObservation, RegressionMixture};
use online_em::simgen::{gen_regmix_flexmix, regmix_flexmix_truth, SeededStream};

/// Uniform average of conditional statistics over a set of observations.
fn averaged_stats(
    model: &RegressionMixture,
    obs: &[RegObservation],
    theta: &RegMixParams,
) -> StatVector {
    let mut acc = DVector::zeros(model.stat_dim());
    for o in obs {
        acc += model.cond_expect_stat(o, theta).values();
    }
    acc /= obs.len() as f64;
    StatVector::new(acc).unwrap()
}

/// The pivot-based domain test agrees with an eigenvalue-sign oracle
/// (outside a narrow tolerance buffer), blends of a handful of draws from
/// the simulation design enter the domain, and too few observations never
/// do.
#[test]
fn domain_entry_matches_eigenvalue_oracle() {
    let model = RegressionMixture::new(2, 3);
    let truth = regmix_flexmix_truth();
    let mut entered = 0usize;
    let mut trials = 0usize;
    for seed in 0..150u64 {
        let k = 4 + (seed % 7) as usize;
        let obs: Vec<RegObservation> = gen_regmix_flexmix(k, &SeededStream::new(9000 + seed, 0))
            .into_iter()
            .map(|(o, _)| o)
            .collect();
        let s = averaged_stats(&model, &obs, &truth);
        let verdict = model.in_domain(&s);
        // Eigenvalue oracle with a buffer around the pivot tolerance.
        let mut clearly_pd = true;
        let mut clearly_singular = false;
        for j in 0..2 {
            let m = model.bordered_moment(&s, j);
            let scale = m.trace() / 4.0;
            let min_eig = m
                .symmetric_eigenvalues()
                .iter()
                .cloned()
                .fold(f64::MAX, f64::min);
            if min_eig <= 1e-9 * scale {
                clearly_pd = false;
            }
            if min_eig <= 1e-15 * scale {
                clearly_singular = true;
            }
        }
        if clearly_pd {
            assert!(verdict, "seed {seed} (k={k}): oracle says PD, domain test says no");
        }
        if clearly_singular {
            assert!(!verdict, "seed {seed} (k={k}): oracle says singular, domain test says yes");
        }
        trials += 1;
        if verdict {
            entered += 1;
        }
    }
    // Entry after a handful of generic draws is the norm.
    assert!(
        entered * 10 >= trials * 8,
        "only {entered}/{trials} short blends entered the domain"
    );

    // A twenty-observation warmup enters the domain essentially always.
    for seed in 0..100u64 {
        let obs: Vec<RegObservation> = gen_regmix_flexmix(20, &SeededStream::new(9500 + seed, 0))
            .into_iter()
            .map(|(o, _)| o)
            .collect();
        let s = averaged_stats(&model, &obs, &truth);
        assert!(model.in_domain(&s), "seed {seed}: warmup blend out of domain");
    }

    // Fewer than d_z + 1 observations: rank-deficient bordered moments.
    for seed in 0..50u64 {
        let k = 1 + (seed % 3) as usize;
        let obs: Vec<RegObservation> = gen_regmix_flexmix(k, &SeededStream::new(9800 + seed, 0))
            .into_iter()
            .map(|(o, _)| o)
            .collect();
        let s = averaged_stats(&model, &obs, &truth);
        assert!(!model.in_domain(&s), "k={k} must stay out of the domain");
    }
}

/// Warm start on the simulation design, then ten thousand further online
/// steps: the statistic never leaves the domain (empirical closure).
#[test]
fn domain_closure_along_online_recursion() {
    let model = RegressionMixture::new(2, 3);
    let truth = regmix_flexmix_truth();
    let data = gen_regmix_flexmix(10_020, &SeededStream::new(404, 0));
    let sched = StepSchedule::new(1.0, 0.6).unwrap();

    // Reasonable but wrong start.
    let theta0 = RegMixParams::new(
        &[0.5, 0.5],
        &[vec![5.0, 3.0, 1.0], vec![10.0, 8.0, -5.0]],
        &[50.0, 120.0],
    )
    .unwrap();

    let mut s: Option<StatVector> = None;
    let mut theta = theta0;
    for (n, (obs, _)) in data.iter().enumerate() {
        let gamma = sched.gamma(n + 1);
        let sbar = model.cond_expect_stat(obs, &theta);
        let s_next = match &s {
            Some(prev) => blend_stats(prev, &sbar, gamma).unwrap(),
            None => sbar,
        };
        if n + 1 > 20 {
            assert!(
                model.in_domain(&s_next),
                "left the domain at step {}",
                n + 1
            );
            theta = model.mstep(&s_next).unwrap();
            assert!(theta.sigma2().iter().all(|&v| v > 0.0));
        }
        s = Some(s_next);
    }
    // Sanity: the fit ends in the neighbourhood of the truth.
    for j in 0..2 {
        let d = (theta.beta(j) - truth.beta(j)).norm();
        assert!(d < 25.0, "component {j} drifted: {d}");
    }
}

/// With a single component the recursion at step sizes 1/n is exactly
/// online accumulation of the least-squares moments: the final coefficient
/// vector matches the batch solve.
#[test]
fn single_component_reduces_to_least_squares() {
    let model = RegressionMixture::new(1, 3);
    let mut rng = ChaCha20Rng::seed_from_u64(901);
    let n = 10_000;
    let data: Vec<RegObservation> = (0..n)
        .map(|_| {
            let u: f64 = 10.0 * rng.random::<f64>();
            let noise: f64 = 3.0 * (rng.random::<f64>() - 0.5);
            RegObservation::new(2.0 + 1.5 * u - 0.2 * u * u + noise, &[1.0, u, u * u / 10.0])
                .unwrap()
        })
        .collect();
    let theta0 = RegMixParams::new(&[1.0], &[vec![0.0, 0.0, 0.0]], &[1.0]).unwrap();
    let sched = StepSchedule::new(1.0, 1.0).unwrap();
    let opts = RunOptions {
        warmup: 4,
        ..Default::default()
    };
    let res = run_online_em(&model, &data, &sched, None, &theta0, &opts).unwrap();

    let mut xtx = DMatrix::<f64>::zeros(3, 3);
    let mut xtr = DVector::<f64>::zeros(3);
    for obs in &data {
        xtx += &obs.z * obs.z.transpose();
        xtr += &obs.z * obs.r;
    }
    let batch = xtx.lu().solve(&xtr).unwrap();
    for a in 0..3 {
        let rel = (res.final_params.beta(0)[a] - batch[a]).abs() / batch[a].abs().max(1.0);
        assert!(rel < 1e-3, "coordinate {a}: {} vs {}", res.final_params.beta(0)[a], batch[a]);
    }
}

/// About forty percent of draws from the simulation design have an
/// ambiguous posterior (between 0.25 and 0.75) at the true parameters.
#[test]
fn design_ambiguity_level() {
    let model = RegressionMixture::new(2, 3);
    let truth = regmix_flexmix_truth();
    let data = gen_regmix_flexmix(100_000, &SeededStream::new(555, 0));
    let ambiguous = data
        .iter()
        .filter(|(obs, _)| {
            let w = model.posterior_weights(obs, &truth);
            w[0] > 0.25 && w[0] < 0.75
        })
        .count() as f64
        / data.len() as f64;
    assert!(
        (ambiguous - 0.40).abs() < 0.03,
        "ambiguous fraction {ambiguous}"
    );
}
