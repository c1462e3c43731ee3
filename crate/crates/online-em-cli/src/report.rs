//! The `asymptotics` command: information-based standard deviations and
//! correlations at the true parameter, plus the drift/noise/covariance
//! block of the parameter-space recursion.
//!
//! For the regression mixture the per-component regression blocks are also
//! reported: the reference values quoted next to replication studies come
//! from inverting each component's own block of the information matrix
//! (the estimate a per-component score average can support), not from the
//! full-parameter inverse.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use online_em::asymptotics::{
    covariance_summary, empirical_information, zeta_for_schedule, AsymptoticReport, Empirical,
    PoissonExactLaw,
};
use online_em::model::StepSchedule;
use online_em::poisson::PoissonMixture;
use online_em::regmix::{RegObservation, RegressionMixture};
use online_em::simgen::{gen_regmix_flexmix, regmix_flexmix_truth, SeededStream};

use crate::config::{ExperimentConfig, ModelKind};
use crate::experiment::HarnessError;

fn free_labels_poisson(m: usize) -> Vec<String> {
    (1..m)
        .map(|j| format!("omega_{j}"))
        .chain((1..=m).map(|j| format!("lambda_{j}")))
        .collect()
}

fn free_labels_regmix(m: usize, d_z: usize) -> Vec<String> {
    let mut labels: Vec<String> = (1..m).map(|j| format!("omega_{j}")).collect();
    for j in 1..=m {
        for a in 0..d_z {
            labels.push(format!("beta_{j}_{a}"));
        }
    }
    labels.extend((1..=m).map(|j| format!("sigma2_{j}")));
    labels
}

fn matrix_block(out: &mut String, name: &str, m: &DMatrix<f64>) {
    let _ = writeln!(out, "# block: {name} ({}x{}, row-major)", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| m[(i, j)].to_string()).collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
}

fn zeta(cfg: &ExperimentConfig) -> Result<f64, HarnessError> {
    match cfg.zeta {
        Some(z) => Ok(z),
        None => Ok(zeta_for_schedule(&StepSchedule::new(cfg.gamma0, cfg.alpha)?)),
    }
}

/// Renders the asymptotics report as one CSV document.
pub fn run_asymptotics_report(cfg: &ExperimentConfig) -> Result<String, HarnessError> {
    match cfg.model {
        ModelKind::Poisson => {
            let truth = crate::experiment::poisson_truth_params(cfg)?;
            let model = PoissonMixture::new(truth.m());
            let law = PoissonExactLaw::new(&truth, 1e-12);
            let report = AsymptoticReport::compute(&model, &law, &truth, zeta(cfg)?, cfg.fd_step_rel)
                .map_err(|e| HarnessError::Config(format!("asymptotics: {e}")))?;
            let mut buf = Vec::new();
            report
                .write_csv(&mut buf, &free_labels_poisson(truth.m()))
                .map_err(HarnessError::Io)?;
            Ok(String::from_utf8(buf).expect("csv is utf-8"))
        }
        ModelKind::Regmix => {
            let truth = regmix_flexmix_truth();
            let model = RegressionMixture::new(2, 3);
            let data: Vec<RegObservation> =
                gen_regmix_flexmix(cfg.n_info, &SeededStream::new(cfg.base_seed, 0))
                    .into_iter()
                    .map(|(o, _)| o)
                    .collect();
            let law = Empirical(&data);
            let report = AsymptoticReport::compute(&model, &law, &truth, zeta(cfg)?, cfg.fd_step_rel)
                .map_err(|e| HarnessError::Config(format!("asymptotics: {e}")))?;
            let mut buf = Vec::new();
            report
                .write_csv(&mut buf, &free_labels_regmix(2, 3))
                .map_err(HarnessError::Io)?;
            let mut out = String::from_utf8(buf).expect("csv is utf-8");

            // Per-component regression blocks.
            let info = empirical_information(&model, &law, &truth);
            if !info.full_rank {
                return Err(HarnessError::Config(
                    "asymptotics: information matrix is singular".into(),
                ));
            }
            for (sds, corr, j) in regmix_beta_blocks(&info.matrix, 2, 3)? {
                let _ = writeln!(out, "# block: beta_{j}_sd ({} entries)", sds.len());
                let row: Vec<String> = sds.iter().map(|v| v.to_string()).collect();
                let _ = writeln!(out, "{}", row.join(","));
                matrix_block(&mut out, &format!("beta_{j}_corr"), &corr);
            }
            Ok(out)
        }
    }
}

/// Per-component regression summary: standard deviations, correlation
/// matrix and the 1-based component index.
pub type BetaBlockSummary = (Vec<f64>, DMatrix<f64>, usize);

/// Standard deviations and correlations per regression block, from the
/// inverse of each component's own information block.
pub fn regmix_beta_blocks(
    info: &DMatrix<f64>,
    m: usize,
    d_z: usize,
) -> Result<Vec<BetaBlockSummary>, HarnessError> {
    let mut out = Vec::new();
    for j in 0..m {
        let lo = m - 1 + j * d_z;
        let block: DMatrix<f64> = info.view((lo, lo), (d_z, d_z)).into_owned();
        let inv = block.try_inverse().ok_or_else(|| {
            HarnessError::Config(format!("beta block {} is singular", j + 1))
        })?;
        let (sd, corr) = covariance_summary(&inv);
        out.push((sd.iter().copied().collect(), corr, j + 1));
    }
    Ok(out)
}
