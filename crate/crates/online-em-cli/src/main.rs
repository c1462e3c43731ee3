use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use online_em_cli::config::{ExperimentConfig, ModelKind};
use online_em_cli::experiment::{
    metadata_text, poisson_truth_params, run_experiment, run_fit, write_experiment, HarnessError,
};
use online_em_cli::report::run_asymptotics_report;

use online_em::simgen::{
    gen_poisson_mixture, gen_regmix_flexmix, write_poisson_csv, write_regmix_csv, SeededStream,
};

/// Online EM experiment harness: simulation, single fits, replication
/// studies and asymptotic-covariance reports, all emitting CSV.
#[derive(Parser)]
#[command(name = "online-em", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset and write it as CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (dataset.csv is written inside).
        #[arg(long)]
        out: PathBuf,
        /// Override the config's base seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a single online fit and print the final (and averaged) estimate.
    Fit {
        #[arg(long)]
        config: PathBuf,
        /// Optional output directory for trajectory.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Replication study: every algorithm on the same per-replica data.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (0 = one per core). Never affects output bytes.
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Information-based asymptotic report at the true parameter.
    Asymptotics {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = ExperimentConfig::from_file(path)
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    if let Some(seed) = seed {
        cfg.base_seed = seed;
    }
    Ok(cfg)
}

fn simulate(cfg: &ExperimentConfig, out: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(out)?;
    let path = out.join("dataset.csv");
    match cfg.model {
        ModelKind::Poisson => {
            let truth = poisson_truth_params(cfg)?;
            let data = gen_poisson_mixture(cfg.n, &truth, &SeededStream::new(cfg.base_seed, 0));
            write_poisson_csv(&path, &data)?;
        }
        ModelKind::Regmix => {
            let data = gen_regmix_flexmix(cfg.n, &SeededStream::new(cfg.base_seed, 0));
            write_regmix_csv(&path, &data)?;
        }
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn print_estimate(labels: &[String], values: &[f64], title: &str) {
    println!("{title}:");
    for (label, value) in labels.iter().zip(values) {
        println!("  {label} = {value}");
    }
}

/// Exit codes: 0 success, 1 config error, 2 runtime/domain failure.
fn run() -> Result<(), (u8, String)> {
    let cli = Cli::parse();
    let code = |e: &HarnessError| match e {
        HarnessError::Config(_) => 1u8,
        _ => 2u8,
    };
    match cli.command {
        Command::Simulate { config, out, seed } => {
            let cfg = load_config(&config, seed).map_err(|e| (1, e.to_string()))?;
            simulate(&cfg, &out).map_err(|e| (code(&e), e.to_string()))
        }
        Command::Fit { config, out, seed } => {
            let cfg = load_config(&config, seed).map_err(|e| (1, e.to_string()))?;
            let fit = run_fit(&cfg).map_err(|e| (code(&e), e.to_string()))?;
            println!("steps = {}", fit.n_steps);
            print_estimate(&fit.param_labels, &fit.final_theta, "final");
            if let Some(avg) = &fit.averaged_theta {
                print_estimate(&fit.param_labels, avg, "averaged");
            }
            if let (Some(dir), Some(traj)) = (out, fit.trajectory_csv) {
                std::fs::create_dir_all(&dir).map_err(|e| (2, e.to_string()))?;
                let path = dir.join("trajectory.csv");
                std::fs::write(&path, traj).map_err(|e| (2, e.to_string()))?;
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::Experiment {
            config,
            out,
            threads,
            seed,
        } => {
            let cfg = load_config(&config, seed).map_err(|e| (1, e.to_string()))?;
            let output = run_experiment(&cfg, threads).map_err(|e| (code(&e), e.to_string()))?;
            write_experiment(&out, &cfg, &output).map_err(|e| (2, e.to_string()))?;
            println!(
                "wrote {} rows ({} failed) to {}",
                output.rows.len(),
                output.n_failed,
                out.display()
            );
            if output.failure_rate() > cfg.max_failure_rate {
                return Err((
                    2,
                    format!(
                        "failure rate {:.4} exceeds max_failure_rate {}",
                        output.failure_rate(),
                        cfg.max_failure_rate
                    ),
                ));
            }
            Ok(())
        }
        Command::Asymptotics { config, out, seed } => {
            let cfg = load_config(&config, seed).map_err(|e| (1, e.to_string()))?;
            let csv = run_asymptotics_report(&cfg).map_err(|e| (code(&e), e.to_string()))?;
            std::fs::create_dir_all(&out).map_err(|e| (2, e.to_string()))?;
            let path = out.join("asymptotics.csv");
            std::fs::write(&path, csv).map_err(|e| (2, e.to_string()))?;
            std::fs::write(out.join("metadata.txt"), metadata_text(&cfg))
                .map_err(|e| (2, e.to_string()))?;
            println!("wrote {}", path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
