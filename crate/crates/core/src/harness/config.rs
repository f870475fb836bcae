//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::PropagationForm;
use crate::channel::activation_probability;
use crate::error::{Error, Result};
use crate::learning::{GaussianMixture, PartitionScheme, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Scheme {
    /// Error-free aggregation over all devices.
    Ideal,
    /// AirComp with no pruning and no spreading (`G = 1`).
    NoSb,
    /// Random pruning at ratio `gamma` without spreading.
    PruneOnly { gamma: f64 },
    /// Closed-form SIR-only depth, fixed for the run.
    FixedBd,
    /// Depth fixed for the run, found by scanning the air-interface error.
    FixedBdOracle,
    /// Depth re-chosen every round from GSI and the active count.
    AdaptiveBd,
}

impl Scheme {
    pub fn label(&self) -> String {
        match self {
            Scheme::Ideal => "ideal".into(),
            Scheme::NoSb => "no_sb".into(),
            Scheme::PruneOnly { gamma } => format!("prune_only_{gamma}"),
            Scheme::FixedBd => "fixed_bd".into(),
            Scheme::FixedBdOracle => "fixed_bd_oracle".into(),
            Scheme::AdaptiveBd => "adaptive_bd".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum DataSource {
    GaussianMixture(GaussianMixture),
    Csv { path: PathBuf },
    Idx { images: PathBuf, labels: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    #[serde(flatten)]
    pub source: DataSource,
    /// Fraction held out for evaluation.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_partition")]
    pub partition: PartitionScheme,
}

fn default_test_fraction() -> f64 {
    0.2
}

fn default_partition() -> PartitionScheme {
    PartitionScheme::Iid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputPaths {
    pub csv: PathBuf,
    pub summary: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropagationVariant {
    #[default]
    Main,
    Appendix,
}

impl From<PropagationVariant> for PropagationForm {
    fn from(v: PropagationVariant) -> Self {
        match v {
            PropagationVariant::Main => PropagationForm::MainText,
            PropagationVariant::Appendix => PropagationForm::Appendix,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub scheme: Scheme,
    pub task: TaskSpec,
    pub data: DataConfig,
    pub num_devices: usize,
    pub rounds: usize,
    pub sir_db: f64,
    pub g_th: f64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Turn the interference off entirely (ablation).
    #[serde(default = "default_true")]
    pub interference: bool,
    /// Pin the breathing depth, overriding the scheme's own choice.
    #[serde(default)]
    pub force_depth: Option<usize>,
    /// Per-device transmit energy budget for the power audit.
    #[serde(default)]
    pub power_budget: Option<f64>,
    #[serde(default)]
    pub propagation: PropagationVariant,
    /// Warm-up draws used by `fixed_bd_oracle`.
    #[serde(default = "default_warmup")]
    pub oracle_warmup: usize,
    #[serde(default)]
    pub output: Option<OutputPaths>,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_trials() -> usize {
    1
}

fn default_true() -> bool {
    true
}

fn default_warmup() -> usize {
    200
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::config("rounds must be at least 1"));
        }
        if self.trials == 0 {
            return Err(Error::config("trials must be at least 1"));
        }
        if self.num_devices == 0 {
            return Err(Error::config("num_devices must be at least 1"));
        }
        if let Scheme::PruneOnly { gamma } = self.scheme {
            if !(gamma > 0.0 && gamma <= 1.0) {
                return Err(Error::config(format!("prune_only gamma {gamma} outside (0, 1]")));
            }
        }
        if !self.sir_db.is_finite() {
            return Err(Error::config("sir_db must be finite"));
        }
        if !(self.g_th >= 0.0) || !self.g_th.is_finite() {
            return Err(Error::config("g_th must be a finite nonnegative threshold"));
        }
        if self.force_depth == Some(0) {
            return Err(Error::config("force_depth must be at least 1"));
        }
        if self.scheme == Scheme::FixedBdOracle && self.oracle_warmup == 0 {
            return Err(Error::config("oracle_warmup must be positive"));
        }
        if !(self.data.test_fraction > 0.0 && self.data.test_fraction < 1.0) {
            return Err(Error::config("test_fraction must lie in (0, 1)"));
        }
        self.task.validate()
    }

    pub fn xi_a(&self) -> f64 {
        activation_probability(self.g_th)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parse, applying `key=value` overrides on dotted paths first.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: ExperimentConfig = value.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).unwrap_or_else(|e| format!("# unserializable config: {e}\n"))
    }
}

/// Set `a.b.c = value` in a TOML tree. The value is parsed as a TOML
/// literal, falling back to a bare string.
pub fn apply_override(root: &mut toml::Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() {
        return Err(Error::config(format!("override `{assignment}` has an empty key")));
    }
    let parsed = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override `{key}`: `{part}` is not inside a table")))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| Error::config(format!("override `{key}` does not address a table entry")))?;
    table.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}
