//! Line-oriented `key = value` configuration with `#` comments and
//! comma-separated lists. No quoting, no sections; unknown keys are errors
//! so typos surface immediately.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("missing required config key `{0}`")]
    MissingKey(&'static str),
    #[error("invalid value for `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Malformed { line: usize, text: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Poisson,
    Regmix,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::Poisson => write!(f, "poisson"),
            ModelKind::Regmix => write!(f, "regmix"),
        }
    }
}

/// Algorithm labels of the replication protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    /// Five iterations of batch EM over the whole sample.
    Em5,
    /// Online EM with steps `1/n`.
    Ol1,
    /// Online EM with steps `n^-0.6`.
    Ol06,
    /// Online EM with steps `n^-0.6` plus averaging.
    Ol06a,
    /// Information-weighted gradient recursion (Poisson only).
    Titt,
}

impl Algorithm {
    pub fn label(&self) -> &'static str {
        match self {
            Algorithm::Em5 => "EM5",
            Algorithm::Ol1 => "OL1",
            Algorithm::Ol06 => "OL06",
            Algorithm::Ol06a => "OL06a",
            Algorithm::Titt => "TITT",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "EM5" => Some(Algorithm::Em5),
            "OL1" => Some(Algorithm::Ol1),
            "OL06" => Some(Algorithm::Ol06),
            "OL06a" => Some(Algorithm::Ol06a),
            "TITT" => Some(Algorithm::Titt),
            _ => None,
        }
    }
}

/// Trajectory retention for the `fit` command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetentionChoice {
    Final,
    Every(usize),
    Full,
}

/// Averaging request for the `fit` command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AveragingChoice {
    None,
    Fraction(f64),
    Step(usize),
}

/// Everything the harness commands read from a config file. Every field has
/// a default except the model; commands validate the subset they need.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub n: usize,
    pub replications: usize,
    pub algorithms: Vec<Algorithm>,
    pub warmup: usize,
    pub base_seed: u64,
    pub averaging_start_fraction: f64,
    pub max_failure_rate: f64,
    /// Poisson truth (required for poisson experiments and reports).
    pub truth_omega: Option<Vec<f64>>,
    pub truth_lambda: Option<Vec<f64>>,
    /// Explicit starting points; when absent the harness reconstructs them
    /// from the warmup block.
    pub theta0_omega: Option<Vec<f64>>,
    pub theta0_lambda: Option<Vec<f64>>,
    pub theta0_beta: Option<Vec<f64>>,
    pub theta0_sigma2: Option<Vec<f64>>,
    /// `label:value` reference standard deviations for summary columns.
    pub reference_sd: Vec<(String, f64)>,
    /// Observations for information estimation in the asymptotics report.
    pub n_info: usize,
    pub fd_step_rel: f64,
    /// Lyapunov shift; `None` derives it from the schedule.
    pub zeta: Option<f64>,
    /// Schedule for `fit` (and for the zeta derivation).
    pub gamma0: f64,
    pub alpha: f64,
    /// Debug-only constant step size for `fit`.
    pub constant_gamma: Option<f64>,
    pub averaging: AveragingChoice,
    pub retention: RetentionChoice,
    /// Optional dataset to fit instead of generating one.
    pub data_file: Option<PathBuf>,
}

impl ExperimentConfig {
    fn with_model(model: ModelKind) -> Self {
        ExperimentConfig {
            model,
            n: 100,
            replications: 1,
            algorithms: vec![Algorithm::Ol06a],
            warmup: match model {
                ModelKind::Regmix => 20,
                ModelKind::Poisson => 0,
            },
            base_seed: 0,
            averaging_start_fraction: 0.5,
            max_failure_rate: 0.05,
            truth_omega: None,
            truth_lambda: None,
            theta0_omega: None,
            theta0_lambda: None,
            theta0_beta: None,
            theta0_sigma2: None,
            reference_sd: Vec::new(),
            n_info: 1_000_000,
            fd_step_rel: 1e-4,
            zeta: None,
            gamma0: 1.0,
            alpha: 0.6,
            constant_gamma: None,
            averaging: AveragingChoice::None,
            retention: RetentionChoice::Final,
            data_file: None,
        }
    }

    pub fn from_str_content(text: &str) -> Result<Self, ConfigError> {
        let mut raw: BTreeMap<String, String> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = match line.find('#') {
                Some(pos) => &line[..pos],
                None => line,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Malformed {
                line: i + 1,
                text: line.to_string(),
            })?;
            raw.insert(key.trim().to_string(), value.trim().to_string());
        }

        let model_str = raw
            .remove("model")
            .ok_or(ConfigError::MissingKey("model"))?;
        let model = match model_str.as_str() {
            "poisson" => ModelKind::Poisson,
            "regmix" => ModelKind::Regmix,
            other => {
                return Err(ConfigError::InvalidValue {
                    key: "model".into(),
                    reason: format!("expected poisson or regmix, got `{other}`"),
                })
            }
        };
        let mut cfg = ExperimentConfig::with_model(model);

        for (key, value) in raw {
            match key.as_str() {
                "n" => cfg.n = parse_scalar(&key, &value)?,
                "replications" => cfg.replications = parse_scalar(&key, &value)?,
                "warmup" => cfg.warmup = parse_scalar(&key, &value)?,
                "base_seed" => cfg.base_seed = parse_scalar(&key, &value)?,
                "n_info" => cfg.n_info = parse_scalar(&key, &value)?,
                "averaging_start_fraction" => {
                    let f: f64 = parse_scalar(&key, &value)?;
                    if !(f > 0.0 && f < 1.0) {
                        return Err(ConfigError::InvalidValue {
                            key,
                            reason: format!("fraction {f} outside (0, 1)"),
                        });
                    }
                    cfg.averaging_start_fraction = f;
                }
                "max_failure_rate" => cfg.max_failure_rate = parse_scalar(&key, &value)?,
                "fd_step_rel" => cfg.fd_step_rel = parse_scalar(&key, &value)?,
                "gamma0" => cfg.gamma0 = parse_scalar(&key, &value)?,
                "alpha" => cfg.alpha = parse_scalar(&key, &value)?,
                "constant_gamma" => cfg.constant_gamma = Some(parse_scalar(&key, &value)?),
                "zeta" => {
                    cfg.zeta = if value == "auto" {
                        None
                    } else {
                        Some(parse_scalar(&key, &value)?)
                    }
                }
                "algorithms" => {
                    let mut algos = Vec::new();
                    for item in value.split(',') {
                        let item = item.trim();
                        let algo =
                            Algorithm::parse(item).ok_or_else(|| ConfigError::InvalidValue {
                                key: key.clone(),
                                reason: format!("unknown algorithm `{item}`"),
                            })?;
                        if !algos.contains(&algo) {
                            algos.push(algo);
                        }
                    }
                    if algos.is_empty() {
                        return Err(ConfigError::InvalidValue {
                            key,
                            reason: "empty algorithm list".into(),
                        });
                    }
                    cfg.algorithms = algos;
                }
                "truth_omega" => cfg.truth_omega = Some(parse_list(&key, &value)?),
                "truth_lambda" => cfg.truth_lambda = Some(parse_list(&key, &value)?),
                "theta0_omega" => cfg.theta0_omega = Some(parse_list(&key, &value)?),
                "theta0_lambda" => cfg.theta0_lambda = Some(parse_list(&key, &value)?),
                "theta0_beta" => cfg.theta0_beta = Some(parse_list(&key, &value)?),
                "theta0_sigma2" => cfg.theta0_sigma2 = Some(parse_list(&key, &value)?),
                "reference_sd" => {
                    let mut refs = Vec::new();
                    for item in value.split(',') {
                        let item = item.trim();
                        let (label, sd) =
                            item.split_once(':').ok_or_else(|| ConfigError::InvalidValue {
                                key: key.clone(),
                                reason: format!("expected label:value, got `{item}`"),
                            })?;
                        refs.push((label.trim().to_string(), parse_scalar(&key, sd.trim())?));
                    }
                    cfg.reference_sd = refs;
                }
                "averaging" => {
                    cfg.averaging = if value == "none" {
                        AveragingChoice::None
                    } else if let Some(f) = value.strip_prefix("fraction:") {
                        AveragingChoice::Fraction(parse_scalar(&key, f)?)
                    } else if let Some(s) = value.strip_prefix("step:") {
                        AveragingChoice::Step(parse_scalar(&key, s)?)
                    } else {
                        return Err(ConfigError::InvalidValue {
                            key,
                            reason: format!("expected none, fraction:F or step:N, got `{value}`"),
                        });
                    };
                }
                "retention" => {
                    cfg.retention = if value == "final" {
                        RetentionChoice::Final
                    } else if value == "full" {
                        RetentionChoice::Full
                    } else if let Some(k) = value.strip_prefix("every:") {
                        RetentionChoice::Every(parse_scalar(&key, k)?)
                    } else {
                        return Err(ConfigError::InvalidValue {
                            key,
                            reason: format!("expected final, full or every:K, got `{value}`"),
                        });
                    };
                }
                "data_file" => cfg.data_file = Some(PathBuf::from(value)),
                _ => return Err(ConfigError::UnknownKey(key)),
            }
        }
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::from_str_content(&std::fs::read_to_string(path)?)
    }

    /// Resolved `key = value` lines, echoed into metadata files.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        push("model", self.model.to_string());
        push("n", self.n.to_string());
        push("replications", self.replications.to_string());
        push(
            "algorithms",
            self.algorithms
                .iter()
                .map(|a| a.label())
                .collect::<Vec<_>>()
                .join(","),
        );
        push("warmup", self.warmup.to_string());
        push("base_seed", self.base_seed.to_string());
        push(
            "averaging_start_fraction",
            self.averaging_start_fraction.to_string(),
        );
        push("max_failure_rate", self.max_failure_rate.to_string());
        if let Some(v) = &self.truth_omega {
            push("truth_omega", join(v));
        }
        if let Some(v) = &self.truth_lambda {
            push("truth_lambda", join(v));
        }
        if let Some(v) = &self.theta0_omega {
            push("theta0_omega", join(v));
        }
        if let Some(v) = &self.theta0_lambda {
            push("theta0_lambda", join(v));
        }
        if let Some(v) = &self.theta0_beta {
            push("theta0_beta", join(v));
        }
        if let Some(v) = &self.theta0_sigma2 {
            push("theta0_sigma2", join(v));
        }
        if !self.reference_sd.is_empty() {
            push(
                "reference_sd",
                self.reference_sd
                    .iter()
                    .map(|(l, v)| format!("{l}:{v}"))
                    .collect::<Vec<_>>()
                    .join(","),
            );
        }
        push("n_info", self.n_info.to_string());
        push("fd_step_rel", self.fd_step_rel.to_string());
        push(
            "zeta",
            self.zeta.map(|z| z.to_string()).unwrap_or_else(|| "auto".into()),
        );
        push("gamma0", self.gamma0.to_string());
        push("alpha", self.alpha.to_string());
        if let Some(g) = self.constant_gamma {
            push("constant_gamma", g.to_string());
        }
        out
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_scalar<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::InvalidValue {
        key: key.to_string(),
        reason: e.to_string(),
    })
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>, ConfigError> {
    value
        .split(',')
        .map(|item| parse_scalar(key, item.trim()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_config() {
        let text = "\
# a comment
model = regmix
n = 10000
replications = 500   # inline comment
algorithms = EM5, OL1, OL06, OL06a
warmup = 20
base_seed = 7
reference_sd = beta_2_0:47.8, beta_2_1:22.1
";
        let cfg = ExperimentConfig::from_str_content(text).unwrap();
        assert_eq!(cfg.model, ModelKind::Regmix);
        assert_eq!(cfg.n, 10000);
        assert_eq!(cfg.replications, 500);
        assert_eq!(cfg.algorithms.len(), 4);
        assert_eq!(cfg.warmup, 20);
        assert_eq!(cfg.reference_sd[0], ("beta_2_0".to_string(), 47.8));
    }

    #[test]
    fn rejects_unknown_key_by_name() {
        let err = ExperimentConfig::from_str_content("model = poisson\nreplica = 3\n")
            .unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey(k) if k == "replica"));
    }

    #[test]
    fn rejects_bad_values_by_key() {
        let err =
            ExperimentConfig::from_str_content("model = poisson\nn = many\n").unwrap_err();
        match err {
            ConfigError::InvalidValue { key, .. } => assert_eq!(key, "n"),
            other => panic!("unexpected error {other}"),
        }
        let err = ExperimentConfig::from_str_content(
            "model = regmix\naveraging_start_fraction = 1.5\n",
        )
        .unwrap_err();
        assert!(matches!(err, ConfigError::InvalidValue { .. }));
    }

    #[test]
    fn defaults_depend_on_model() {
        let reg = ExperimentConfig::from_str_content("model = regmix\n").unwrap();
        assert_eq!(reg.warmup, 20);
        let poi = ExperimentConfig::from_str_content("model = poisson\n").unwrap();
        assert_eq!(poi.warmup, 0);
    }

    #[test]
    fn echo_round_trips() {
        let cfg = ExperimentConfig::from_str_content(
            "model = poisson\ntruth_omega = 0.3,0.7\ntruth_lambda = 2,9\nn = 500\n",
        )
        .unwrap();
        let echoed = ExperimentConfig::from_str_content(&cfg.echo()).unwrap();
        assert_eq!(echoed.n, cfg.n);
        assert_eq!(echoed.truth_omega, cfg.truth_omega);
        assert_eq!(echoed.echo(), cfg.echo());
    }
}
