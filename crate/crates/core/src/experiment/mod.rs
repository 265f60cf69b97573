//! Experiment configuration, the end-to-end pipeline and sweeps.
//!
//! Configs are TOML documents. Every section is optional and falls back to
//! the defaults shown by `ExperimentConfig::default()`:
//!
//! ```toml
//! env = "edge-following"
//! seeds = [0, 1, 2]
//! output_dir = "runs/edge"
//!
//! [dataset]
//! kind = "medium_expert"
//! size = 10000
//!
//! [cvae]
//! steps = 5000
//!
//! [agent]
//! steps = 20000
//! epsilon = 0.05
//! ```
//!
//! Individual fields can be overridden with dotted `key=value` pairs (see
//! [`ExperimentConfig::with_overrides`]); the value is parsed as a TOML
//! literal and falls back to a plain string.

mod pipeline;
mod sweep;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::AgentConfig;
use crate::baselines::BcConfig;
use crate::cvae::CvaeConfig;
use crate::diagnostics::DEFAULT_NEIGHBORS;
use crate::diffnet::hex_digest;
use crate::envs::generate::GeneratorConfig;
use crate::envs::{GeneratorKind, ToyEnv};
use crate::error::{Error, Result};

pub use pipeline::{
    diagnose_learner, prepare_cvae, prepare_dataset, read_train_log, run_experiment,
    train_bc_stage, train_plas_stage, train_unconstrained_stage, Comparison, DiagnosticsReport,
    RunOptions, RunPaths, RunSummary, SupportReport,
};
pub use sweep::{
    aggregate_from_logs, run_sweep, SweepAxis, SweepCell, SweepReport, SweepRow, SweepSummaryRow,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: GeneratorKind,
    pub size: usize,
    /// Generator seed; the run seed when absent.
    pub seed: Option<u64>,
    /// Load this dataset file instead of generating one.
    pub path: Option<PathBuf>,
    pub generator: GeneratorConfig,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            kind: GeneratorKind::MediumExpert,
            size: 10_000,
            seed: None,
            path: None,
            generator: GeneratorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Evaluation episodes behind the Q-error report.
    pub q_error_episodes: usize,
    /// Nearest states consulted per support-distance query.
    pub neighbors: usize,
    /// Dataset states probed for the support report.
    pub support_probes: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            q_error_episodes: 10,
            neighbors: DEFAULT_NEIGHBORS,
            support_probes: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: String,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Agent checkpoint cadence in training steps; a multiple of `agent.log_interval`.
    pub checkpoint_interval: usize,
    /// Baselines trained next to PLAS in [`run_experiment`].
    pub compare: Vec<Comparison>,
    pub dataset: DatasetSpec,
    pub cvae: CvaeConfig,
    pub agent: AgentConfig,
    pub bc: BcConfig,
    pub diagnostics: DiagnosticsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            env: "edge-following".into(),
            seeds: vec![0],
            output_dir: PathBuf::from("runs/default"),
            checkpoint_interval: 5000,
            compare: Vec::new(),
            dataset: DatasetSpec::default(),
            cvae: CvaeConfig::default(),
            agent: AgentConfig::default(),
            bc: BcConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Format {
            what: "config",
            reason: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format {
            what: "config",
            reason: e.to_string(),
        })
    }

    /// Applies dotted-path overrides such as `agent.epsilon=0.1` and revalidates.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut doc: toml::Table =
            toml::from_str(&self.to_toml_string()?).map_err(|e| Error::Format {
                what: "config",
                reason: e.to_string(),
            })?;
        for item in overrides {
            let item = item.as_ref();
            let (key, raw) = item.split_once('=').ok_or_else(|| Error::Format {
                what: "override",
                reason: format!("`{item}` is not key=value"),
            })?;
            set_path(&mut doc, key.trim(), parse_literal(raw.trim()))?;
        }
        let text = toml::to_string(&doc).map_err(|e| Error::Format {
            what: "config",
            reason: e.to_string(),
        })?;
        Self::from_toml_str(&text)
    }

    /// Checks every field; errors carry the dotted path of the bad field.
    pub fn validate(&self) -> Result<()> {
        ToyEnv::by_name(&self.env)
            .map_err(|_| Error::invalid("env", format!("unknown env `{}`", self.env)))?;
        if self.seeds.is_empty() {
            return Err(Error::invalid("seeds", "need at least one seed"));
        }
        if self.dataset.path.is_none() && self.dataset.size == 0 {
            return Err(Error::invalid("dataset.size", "must be positive"));
        }
        self.dataset.generator.validate("dataset.generator.")?;
        self.cvae.validate("cvae.")?;
        self.agent.validate("agent.")?;
        self.bc.validate("bc.")?;
        if self.checkpoint_interval == 0
            || !self
                .checkpoint_interval
                .is_multiple_of(self.agent.log_interval)
        {
            return Err(Error::invalid(
                "checkpoint_interval",
                "must be a positive multiple of agent.log_interval",
            ));
        }
        let d = &self.diagnostics;
        for (name, v) in [
            ("diagnostics.q_error_episodes", d.q_error_episodes),
            ("diagnostics.neighbors", d.neighbors),
            ("diagnostics.support_probes", d.support_probes),
        ] {
            if v == 0 {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        Ok(())
    }

    pub fn env(&self) -> Result<ToyEnv> {
        ToyEnv::by_name(&self.env)
    }

    pub fn dataset_seed(&self, run_seed: u64) -> u64 {
        self.dataset.seed.unwrap_or(run_seed)
    }

    /// SHA-256 of the config with `seeds` and `output_dir` blanked, so that
    /// the hash names what is computed rather than where or how often.
    pub fn config_hash(&self) -> Result<String> {
        let canonical = ExperimentConfig {
            seeds: Vec::new(),
            output_dir: PathBuf::new(),
            ..self.clone()
        };
        let mut h = Sha256::new();
        h.update(canonical.to_toml_string()?.as_bytes());
        Ok(hex_digest(h)[..16].to_string())
    }
}

/// `"0.1"` → float, `"true"` → bool, `"[1, 2]"` → array, otherwise a string.
fn parse_literal(raw: &str) -> toml::Value {
    #[derive(Deserialize)]
    struct Wrap {
        v: toml::Value,
    }
    toml::from_str::<Wrap>(&format!("v = {raw}"))
        .map(|w| w.v)
        .unwrap_or_else(|_| toml::Value::String(raw.to_string()))
}

fn set_path(doc: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut table = doc;
    for p in parents {
        table = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::invalid(key, format!("`{p}` is not a section")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

/// `100 * (raw - random) / (expert - random)`.
pub fn normalize_score(raw: f64, random_ref: f64, expert_ref: f64) -> Result<f64> {
    if !random_ref.is_finite() || !expert_ref.is_finite() || expert_ref <= random_ref {
        return Err(Error::invalid(
            "reference scores",
            format!("expert {expert_ref} must exceed random {random_ref}"),
        ));
    }
    Ok(100.0 * (raw - random_ref) / (expert_ref - random_ref))
}
