//! Experiment configuration files.
//!
//! One `key = value` pair per line, `#` starts a comment. Keys are flat or
//! dotted by section:
//!
//! ```text
//! algorithm = fedgsp          # fedgsp | naive_gsp | naive_gsp_icg | fedavg
//! seed = 0
//! rounds = 150                # alias: R
//! kappa = 0.3
//! fixed_group_count = 4
//! parallel_groups = false
//! target_accuracy = 0.8
//!
//! task.num_classes = 10
//! task.num_clients = 60
//! task.samples_per_client = 50
//! task.feature_dim = 64
//! task.class_separation = 0.5
//! task.skew = dirichlet       # dirichlet | shards
//! task.concentration = 0.3    # dirichlet only
//! task.shards_per_client = 2  # shards only
//!
//! model.kind = softmax_linear # softmax_linear | mlp_one_hidden
//! model.hidden_units = 32     # mlp_one_hidden only
//!
//! sgd.learning_rate = 0.01
//! sgd.batch_size = 5
//! sgd.local_epochs = 1
//!
//! growth.kind = log           # linear | log | exp
//! growth.alpha = 2
//! growth.beta = 10
//!
//! cpd.sigma = 1
//!
//! cost.n_calc = 96000000
//! cost.n_aggr = 6300000
//! cost.t_flops = 567000000000
//! cost.model_size_mb = 25.2
//! cost.rate_in_mbps = 567
//! cost.rate_out_mbps = 567
//! ```
//!
//! Unknown or repeated keys are errors. Every key has a default, so an empty
//! file is a valid configuration. [`RunConfig::to_canonical_text`] renders
//! the fully-resolved configuration in a fixed key order; run manifests hash
//! that text.

use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::datagen::Skew;
use crate::orchestrator::{Algorithm, ExperimentConfig, GrowthKind};
use crate::trainer::ModelKind;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{0}` given more than once")]
    Duplicate(String),
    #[error("`{key}`: {message}")]
    Value { key: String, message: String },
    #[error("override {0:?} is not of the form key=value")]
    Override(String),
    #[error("{0}")]
    Invalid(String),
}

/// Every accepted key, in canonical order.
pub const KEYS: &[&str] = &[
    "algorithm",
    "seed",
    "rounds",
    "kappa",
    "fixed_group_count",
    "parallel_groups",
    "target_accuracy",
    "task.num_classes",
    "task.num_clients",
    "task.samples_per_client",
    "task.feature_dim",
    "task.class_separation",
    "task.skew",
    "task.concentration",
    "task.shards_per_client",
    "model.kind",
    "model.hidden_units",
    "sgd.learning_rate",
    "sgd.batch_size",
    "sgd.local_epochs",
    "growth.kind",
    "growth.alpha",
    "growth.beta",
    "cpd.sigma",
    "cost.n_calc",
    "cost.n_aggr",
    "cost.t_flops",
    "cost.model_size_mb",
    "cost.rate_in_mbps",
    "cost.rate_out_mbps",
];

fn canonical_key(key: &str) -> Option<&'static str> {
    let key = if key == "R" { "rounds" } else { key };
    KEYS.iter().copied().find(|k| *k == key)
}

/// Parses `key = value` lines, preserving order.
pub fn parse_pairs(text: &str) -> Result<Vec<(&'static str, String)>, ConfigError> {
    let mut out: Vec<(&'static str, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax { line: i + 1, text: raw.to_string() })?;
        let key = canonical_key(k.trim()).ok_or_else(|| ConfigError::UnknownKey(k.trim().to_string()))?;
        if out.iter().any(|(existing, _)| *existing == key) {
            return Err(ConfigError::Duplicate(key.to_string()));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

/// Experiment plus reporting settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    /// Accuracy threshold for the rounds-to-target statistic.
    pub target_accuracy: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut experiment = ExperimentConfig::default();
        experiment.task.feature_dim = 64;
        experiment.task.class_separation = 0.5;
        experiment.rounds = 150;
        experiment.growth.beta = 4;
        experiment.fixed_group_count = 4;
        Self { experiment, target_accuracy: 0.8 }
    }
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    raw.parse::<T>().map_err(|e| ConfigError::Value { key: key.to_string(), message: format!("{raw:?}: {e}") })
}

impl RunConfig {
    /// Parses `text`, then applies `overrides` (`key=value` strings) on top.
    pub fn from_text(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut pairs = parse_pairs(text)?;
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| ConfigError::Override(o.clone()))?;
            let key = canonical_key(k.trim()).ok_or_else(|| ConfigError::UnknownKey(k.trim().to_string()))?;
            match pairs.iter_mut().find(|(existing, _)| *existing == key) {
                Some(slot) => slot.1 = v.trim().to_string(),
                None => pairs.push((key, v.trim().to_string())),
            }
        }
        Self::from_pairs(&pairs)
    }

    pub fn from_pairs(pairs: &[(&'static str, String)]) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let get = |key: &str| pairs.iter().find(|(k, _)| *k == key).map(|(_, v)| v.as_str());

        let skew_kind = get("task.skew").unwrap_or("dirichlet");
        let model_kind = get("model.kind").unwrap_or("softmax_linear");
        let mut concentration = match cfg.experiment.task.skew {
            Skew::Dirichlet { concentration } => concentration,
            Skew::Shards { .. } => 0.3,
        };
        let mut shards_per_client = 2usize;
        let mut hidden_units = 32usize;

        let e = &mut cfg.experiment;
        for (key, raw) in pairs {
            let raw = raw.as_str();
            match *key {
                "algorithm" => e.algorithm = value::<Algorithm>(key, raw)?,
                "seed" => e.seed = value(key, raw)?,
                "rounds" => e.rounds = value(key, raw)?,
                "kappa" => e.kappa = value(key, raw)?,
                "fixed_group_count" => e.fixed_group_count = value(key, raw)?,
                "parallel_groups" => e.parallel_groups = value(key, raw)?,
                "target_accuracy" => cfg.target_accuracy = value(key, raw)?,
                "task.num_classes" => e.task.num_classes = value(key, raw)?,
                "task.num_clients" => e.task.num_clients = value(key, raw)?,
                "task.samples_per_client" => e.task.samples_per_client = value(key, raw)?,
                "task.feature_dim" => e.task.feature_dim = value(key, raw)?,
                "task.class_separation" => e.task.class_separation = value(key, raw)?,
                "task.skew" => {
                    if raw != "dirichlet" && raw != "shards" {
                        return Err(ConfigError::Value { key: key.to_string(), message: format!("{raw:?}: expected dirichlet or shards") });
                    }
                }
                "task.concentration" => concentration = value(key, raw)?,
                "task.shards_per_client" => shards_per_client = value(key, raw)?,
                "model.kind" => {
                    if raw != "softmax_linear" && raw != "mlp_one_hidden" {
                        return Err(ConfigError::Value {
                            key: key.to_string(),
                            message: format!("{raw:?}: expected softmax_linear or mlp_one_hidden"),
                        });
                    }
                }
                "model.hidden_units" => hidden_units = value(key, raw)?,
                "sgd.learning_rate" => e.sgd.learning_rate = value(key, raw)?,
                "sgd.batch_size" => e.sgd.batch_size = value(key, raw)?,
                "sgd.local_epochs" => e.sgd.local_epochs = value(key, raw)?,
                "growth.kind" => e.growth.kind = value::<GrowthKind>(key, raw)?,
                "growth.alpha" => e.growth.alpha = value(key, raw)?,
                "growth.beta" => e.growth.beta = value(key, raw)?,
                "cpd.sigma" => e.cpd.sigma = value(key, raw)?,
                "cost.n_calc" => e.cost.n_calc = value(key, raw)?,
                "cost.n_aggr" => e.cost.n_aggr = value(key, raw)?,
                "cost.t_flops" => e.cost.t_flops = value(key, raw)?,
                "cost.model_size_mb" => e.cost.model_size_mb = value(key, raw)?,
                "cost.rate_in_mbps" => e.cost.rate_in_mbps = value(key, raw)?,
                "cost.rate_out_mbps" => e.cost.rate_out_mbps = value(key, raw)?,
                other => return Err(ConfigError::UnknownKey(other.to_string())),
            }
        }
        e.task.skew = match skew_kind {
            "shards" => Skew::Shards { shards_per_client },
            _ => Skew::Dirichlet { concentration },
        };
        e.model = match model_kind {
            "mlp_one_hidden" => ModelKind::MlpOneHidden { hidden_units },
            _ => ModelKind::SoftmaxLinear,
        };
        e.task.seed = e.seed;
        if !(cfg.target_accuracy.is_finite() && (0.0..=1.0).contains(&cfg.target_accuracy)) {
            return Err(ConfigError::Value {
                key: "target_accuracy".into(),
                message: format!("{} is not in [0, 1]", cfg.target_accuracy),
            });
        }
        cfg.experiment.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    /// Fully resolved configuration, one key per line in [`KEYS`] order.
    /// Keys that do not apply (e.g. `task.concentration` under shards) are
    /// omitted.
    pub fn to_canonical_text(&self) -> String {
        let e = &self.experiment;
        let mut lines: Vec<(&str, String)> = vec![
            ("algorithm", e.algorithm.to_string()),
            ("seed", e.seed.to_string()),
            ("rounds", e.rounds.to_string()),
            ("kappa", e.kappa.to_string()),
            ("fixed_group_count", e.fixed_group_count.to_string()),
            ("parallel_groups", e.parallel_groups.to_string()),
            ("target_accuracy", self.target_accuracy.to_string()),
            ("task.num_classes", e.task.num_classes.to_string()),
            ("task.num_clients", e.task.num_clients.to_string()),
            ("task.samples_per_client", e.task.samples_per_client.to_string()),
            ("task.feature_dim", e.task.feature_dim.to_string()),
            ("task.class_separation", e.task.class_separation.to_string()),
        ];
        match e.task.skew {
            Skew::Dirichlet { concentration } => {
                lines.push(("task.skew", "dirichlet".into()));
                lines.push(("task.concentration", concentration.to_string()));
            }
            Skew::Shards { shards_per_client } => {
                lines.push(("task.skew", "shards".into()));
                lines.push(("task.shards_per_client", shards_per_client.to_string()));
            }
        }
        match e.model {
            ModelKind::SoftmaxLinear => lines.push(("model.kind", "softmax_linear".into())),
            ModelKind::MlpOneHidden { hidden_units } => {
                lines.push(("model.kind", "mlp_one_hidden".into()));
                lines.push(("model.hidden_units", hidden_units.to_string()));
            }
        }
        lines.extend([
            ("sgd.learning_rate", e.sgd.learning_rate.to_string()),
            ("sgd.batch_size", e.sgd.batch_size.to_string()),
            ("sgd.local_epochs", e.sgd.local_epochs.to_string()),
            ("growth.kind", e.growth.kind.to_string()),
            ("growth.alpha", e.growth.alpha.to_string()),
            ("growth.beta", e.growth.beta.to_string()),
            ("cpd.sigma", e.cpd.sigma.to_string()),
            ("cost.n_calc", e.cost.n_calc.to_string()),
            ("cost.n_aggr", e.cost.n_aggr.to_string()),
            ("cost.t_flops", e.cost.t_flops.to_string()),
            ("cost.model_size_mb", e.cost.model_size_mb.to_string()),
            ("cost.rate_in_mbps", e.cost.rate_in_mbps.to_string()),
            ("cost.rate_out_mbps", e.cost.rate_out_mbps.to_string()),
        ]);
        lines.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Hex SHA-256 of [`Self::to_canonical_text`].
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_canonical_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
