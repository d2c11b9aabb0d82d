use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ClassifierConfig, HarnessError};
use crate::datagen::Encoding;
use crate::grouplearn::TrainConfig;
use crate::metrics::ProbeKind;

/// Environment variable naming the UCI Nursery file when the config omits a
/// path.
pub const NURSERY_PATH_ENV: &str = "FAIRCONF_NURSERY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Xnor,
    EightSubgroup,
    MetricEval,
    /// UCI Nursery file from `path` or the environment.
    Nursery,
    /// Full-factorial stand-in with the Nursery schema.
    NurserySurrogate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// Rows for classifier training plus calibration.
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_test_n")]
    pub test_n: usize,
    /// Share of `n` used to train the classifier; the rest calibrates.
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Apply the Nursery group corruption.
    #[serde(default = "yes")]
    pub corrupt: bool,
    #[serde(default)]
    pub encoding: Encoding,
}

fn default_n() -> usize {
    2000
}
fn default_test_n() -> usize {
    2000
}
fn default_train_fraction() -> f64 {
    0.5
}
fn yes() -> bool {
    true
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Xnor,
            n: default_n(),
            test_n: default_test_n(),
            train_fraction: default_train_fraction(),
            path: None,
            corrupt: true,
            encoding: Encoding::Ordinal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Marginal,
    Partial,
    Fareg,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Marginal => "marginal",
            Method::Partial => "partial",
            Method::Fareg => "fareg",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditFeatures {
    #[default]
    All,
    Sensitive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditConfig {
    /// Slab mass floor for the per-run audits.
    pub delta: f64,
    pub n_probes: usize,
    pub kinds: Vec<ProbeKind>,
    pub features: AuditFeatures,
    /// Mass floors evaluated by the `audit` command.
    pub deltas: Vec<f64>,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            delta: 0.5,
            n_probes: 1000,
            kinds: vec![ProbeKind::Linear, ProbeKind::Quadratic],
            features: AuditFeatures::All,
            deltas: vec![0.1, 0.2, 0.3, 0.4, 0.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "one")]
    pub repeats: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    /// Group-learning settings; the dataset's preset when absent.
    #[serde(default)]
    pub fareg: Option<TrainConfig>,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub audit: AuditConfig,
    /// Fill the `seconds` column. Off by default so outputs are reproducible
    /// byte for byte.
    #[serde(default)]
    pub record_timing: bool,
}

fn default_alpha() -> f64 {
    0.1
}
fn default_methods() -> Vec<Method> {
    vec![Method::Marginal, Method::Partial, Method::Fareg]
}
fn one() -> usize {
    1
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config uses defaults")
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Group-learning settings in effect.
    pub fn train_config(&self) -> TrainConfig {
        self.fareg.clone().unwrap_or_else(|| match self.dataset.kind {
            DatasetKind::Nursery | DatasetKind::NurserySurrogate => TrainConfig::nursery(),
            _ => TrainConfig::synthetic(),
        })
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.methods.is_empty() {
            return bad("methods must not be empty".into());
        }
        if self.repeats == 0 {
            return bad("repeats must be positive".into());
        }
        let d = &self.dataset;
        if d.n < 4 || d.test_n == 0 {
            return bad("dataset n must be at least 4 and test_n positive".into());
        }
        if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
            return bad("train_fraction must lie in (0, 1)".into());
        }
        if !(self.audit.delta > 0.0 && self.audit.delta < 1.0) || self.audit.deltas.iter().any(|&x| !(x > 0.0 && x < 1.0))
        {
            return bad("audit deltas must lie in (0, 1)".into());
        }
        if self.audit.n_probes == 0 {
            return bad("audit n_probes must be positive".into());
        }
        self.classifier.validate()?;
        self.train_config()
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_strictness() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.dataset.kind, DatasetKind::Xnor);
        assert_eq!(cfg.methods.len(), 3);
        assert_eq!(cfg.train_config(), TrainConfig::synthetic());
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
        assert!(ExperimentConfig::from_toml("[dataset]\nkind = \"xnor\"\nextra = 2").is_err());
        assert!(ExperimentConfig::from_toml("alpha = 1.5").is_err());
        let n = ExperimentConfig::from_toml("[dataset]\nkind = \"nursery_surrogate\"").unwrap();
        assert_eq!(n.train_config(), TrainConfig::nursery());
        let round = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(round, cfg);
    }
}
