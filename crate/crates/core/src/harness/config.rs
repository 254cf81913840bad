//! Experiment configuration (JSON, unknown keys rejected).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::data::DatasetName;
use crate::instrument::{ProbeConfig, DEFAULT_PROBE_SIZE, DEFAULT_THETA};
use crate::nn::{ArchitectureSpec, LossKind, TrainConfig};
use crate::pruning::{PruneScope, PruneUnit};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Single,
    PruneSweep,
    #[serde(rename = "branch_20_20")]
    Branch2020,
}

fn default_learning_rate() -> f64 {
    0.005
}
fn default_batch_size() -> usize {
    64
}
fn default_theta() -> f64 {
    DEFAULT_THETA
}
fn default_probe_size() -> usize {
    DEFAULT_PROBE_SIZE
}
fn default_fractions() -> Vec<f64> {
    vec![0.3, 0.5, 0.7]
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetName,
    pub protocol: Protocol,
    /// Defaults to a dense `features-128-64-10` network.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub architecture: Option<ArchitectureSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub loss: LossKind,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_probe_size")]
    pub probe_size: usize,
    /// Defaults to `seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_seed: Option<u64>,
    /// Defaults: 5 (`prune_sweep`, `single`), 20 (`branch_20_20`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_epochs: Option<usize>,
    /// Defaults: 20 (`prune_sweep`, `branch_20_20`), 0 (`single`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continue_epochs: Option<usize>,
    #[serde(default = "default_fractions")]
    pub prune_fractions: Vec<f64>,
    #[serde(default)]
    pub prune_scope: PruneScope,
    #[serde(default)]
    pub prune_unit: PruneUnit,
    #[serde(default = "default_true")]
    pub include_input_layer: bool,
    /// Use only the first N training / test samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_limit: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_limit: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// All optional fields at their defaults.
    pub fn new(dataset: DatasetName, protocol: Protocol) -> Self {
        Self {
            dataset,
            protocol,
            architecture: None,
            seed: 0,
            learning_rate: default_learning_rate(),
            batch_size: default_batch_size(),
            loss: LossKind::default(),
            theta: DEFAULT_THETA,
            probe_size: DEFAULT_PROBE_SIZE,
            probe_seed: None,
            baseline_epochs: None,
            continue_epochs: None,
            prune_fractions: default_fractions(),
            prune_scope: PruneScope::default(),
            prune_unit: PruneUnit::default(),
            include_input_layer: true,
            train_limit: None,
            test_limit: None,
            output_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn architecture(&self) -> ArchitectureSpec {
        self.architecture.clone().unwrap_or_else(|| {
            let [c, h, w] = self.dataset.input_shape();
            ArchitectureSpec::mlp(&[c * h * w, 128, 64, self.dataset.classes()])
        })
    }

    pub fn baseline_epochs(&self) -> usize {
        self.baseline_epochs.unwrap_or(match self.protocol {
            Protocol::Branch2020 => 20,
            Protocol::Single | Protocol::PruneSweep => 5,
        })
    }

    pub fn continue_epochs(&self) -> usize {
        self.continue_epochs.unwrap_or(match self.protocol {
            Protocol::Single => 0,
            Protocol::PruneSweep | Protocol::Branch2020 => 20,
        })
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.baseline_epochs() + self.continue_epochs(),
            seed,
            loss: self.loss,
        }
    }

    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig { probe_size: self.probe_size, theta: self.theta, probe_seed: self.probe_seed.unwrap_or(self.seed) }
    }

    /// Full check, including that the architecture fits the named dataset.
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.validate_settings()?;
        let arch = self.architecture();
        let [c, h, w] = self.dataset.input_shape();
        let input = arch.input_len().map_err(|e| HarnessError::Config(e.to_string()))?;
        if input != c * h * w {
            return Err(HarnessError::Config(format!(
                "architecture takes {input} inputs, {} samples have {}",
                self.dataset,
                c * h * w
            )));
        }
        let classes = arch.classes().map_err(|e| HarnessError::Config(e.to_string()))?;
        if classes != self.dataset.classes() {
            return Err(HarnessError::Config(format!(
                "architecture has {classes} outputs, {} has {} classes",
                self.dataset,
                self.dataset.classes()
            )));
        }
        Ok(())
    }

    /// Everything except the dataset shape, for runs on data supplied in memory.
    pub fn validate_settings(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        self.architecture().validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.train_config(self.seed).validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.theta.is_nan() {
            return bad("theta must not be NaN".into());
        }
        if self.probe_size == 0 {
            return bad("probe_size must be >= 1".into());
        }
        for &f in &self.prune_fractions {
            if !(0.0..1.0).contains(&f) {
                return bad(format!("prune fraction {f} outside [0, 1)"));
            }
        }
        let mut names: Vec<String> = self.prune_fractions.iter().map(|&f| fraction_label(f)).collect();
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("prune_fractions contains duplicates".into());
        }
        if self.protocol == Protocol::Branch2020 && self.prune_fractions.is_empty() {
            return bad("branch_20_20 needs a prune fraction".into());
        }
        if self.train_limit == Some(0) || self.test_limit == Some(0) {
            return bad("sample limits must be >= 1".into());
        }
        Ok(())
    }
}

/// `0.3` becomes `30`, `0.125` becomes `12.5`.
pub(crate) fn fraction_label(f: f64) -> String {
    let pct = (f * 1e4).round() / 100.0;
    format!("{pct}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"dataset": "mnist", "protocol": "prune_sweep"}"#).unwrap();
        assert_eq!(cfg.learning_rate, 0.005);
        assert_eq!(cfg.batch_size, 64);
        assert_eq!(cfg.theta, 0.05);
        assert_eq!(cfg.probe_size, 1024);
        assert_eq!(cfg.prune_fractions, vec![0.3, 0.5, 0.7]);
        assert_eq!((cfg.baseline_epochs(), cfg.continue_epochs()), (5, 20));
        assert!(cfg.include_input_layer);
        assert_eq!(cfg.architecture(), ArchitectureSpec::mlp(&[784, 128, 64, 10]));
        let b = ExperimentConfig::from_json(r#"{"dataset": "mnist", "protocol": "branch_20_20"}"#).unwrap();
        assert_eq!((b.baseline_epochs(), b.continue_epochs()), (20, 20));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for text in [
            r#"{"dataset": "mnist", "protocol": "prune_sweep", "colour": 1}"#,
            r#"{"dataset": "imagenet", "protocol": "single"}"#,
            r#"{"dataset": "mnist", "protocol": "single", "prune_fractions": [1.0]}"#,
            r#"{"dataset": "mnist", "protocol": "single", "prune_fractions": [0.3, 0.3]}"#,
            r#"{"dataset": "mnist", "protocol": "single", "learning_rate": 0}"#,
            r#"{"dataset": "mnist", "protocol": "single", "batch_size": 0}"#,
            r#"{"dataset": "mnist", "protocol": "branch_20_20", "prune_fractions": []}"#,
            r#"{"dataset": "cifar10", "protocol": "single", "architecture": {"layers": [{"type": "dense", "in": 784, "out": 10, "activation": "identity"}]}}"#,
        ] {
            assert!(matches!(ExperimentConfig::from_json(text), Err(HarnessError::Config(_))), "{text}");
        }
    }

    #[test]
    fn json_round_trip() {
        let mut cfg = ExperimentConfig::new(DatasetName::FashionMnist, Protocol::Single);
        cfg.probe_seed = Some(9);
        cfg.train_limit = Some(100);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn fraction_labels() {
        assert_eq!(fraction_label(0.3), "30");
        assert_eq!(fraction_label(0.7), "70");
        assert_eq!(fraction_label(0.125), "12.5");
        assert_eq!(fraction_label(0.0), "0");
    }
}
