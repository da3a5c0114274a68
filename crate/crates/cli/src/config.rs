//! Experiment configuration: one strict JSON document with a section per
//! command. Every field that has a default is filled in before the resolved
//! snapshot is written.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sphs_core::agents::RingParams;
use sphs_core::es::{EsConfig, FitnessConfig};
use sphs_core::interconnect::CouplingEntry;
use sphs_core::passivity::PassivityMode;
use sphs_core::phnn::{DatasetConfig, EvalConfig, NetworkKind, TrainConfig};
use sphs_core::{IntegratorConfig, ModelDefinition, Params};

use crate::error::CliError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelDefinition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integrator: Option<IntegratorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passivity: Option<PassivitySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interconnect: Option<InterconnectSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agents: Option<AgentsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phnn: Option<PhnnSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poincare: Option<PoincareSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub es: Option<EsSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub n_paths: usize,
    pub horizon: f64,
    pub x0: Vec<f64>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PassivitySection {
    pub mode: PassivityMode,
    #[serde(default = "yes")]
    pub include_noise_supply: bool,
}

fn default_check_h() -> f64 {
    0.01
}
fn default_check_horizon() -> f64 {
    100.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterconnectSection {
    pub parts: Vec<ModelDefinition>,
    #[serde(default)]
    pub coupling: Vec<CouplingEntry>,
    #[serde(default)]
    pub reexport_coupled: bool,
    /// Start of the deterministic conservation check.
    pub x0: Vec<f64>,
    #[serde(default = "default_check_horizon")]
    pub horizon: f64,
    #[serde(default = "default_check_h")]
    pub h: f64,
}

fn default_agent_h() -> f64 {
    0.05
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentsSection {
    pub ring: RingParams,
    pub n_paths: usize,
    pub horizon: f64,
    #[serde(default = "default_agent_h")]
    pub h: f64,
}

fn all_kinds() -> Vec<NetworkKind> {
    NetworkKind::ALL.to_vec()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhnnSection {
    pub system: String,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "all_kinds")]
    pub kinds: Vec<NetworkKind>,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Directory of a `phnn-train` run, read by `phnn-eval`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bundle: Option<String>,
}

fn default_periods() -> usize {
    500
}
fn default_steps_per_period() -> usize {
    100
}
fn default_transient() -> usize {
    sphs_core::phnn::DEFAULT_TRANSIENT
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoincareSection {
    pub x0: Vec<f64>,
    /// Forcing period; taken from the canonical system's forcing when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
    #[serde(default = "default_periods")]
    pub n_periods: usize,
    #[serde(default = "default_steps_per_period")]
    pub steps_per_period: usize,
    #[serde(default = "default_transient")]
    pub transient: usize,
    /// Network model file whose learned field is sectioned as well.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learned: Option<String>,
    #[serde(default = "default_radius")]
    pub cluster_radius: f64,
}

fn default_radius() -> f64 {
    0.02
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EsSection {
    #[serde(default)]
    pub optimizer: EsConfig,
    pub fitness: FitnessConfig,
    #[serde(default = "yes")]
    pub noise_compensation: bool,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    /// Apply the global seed to every seeded section.
    pub fn resolve(&mut self, seed_override: Option<u64>, out_override: Option<String>) {
        if let Some(s) = seed_override {
            self.seed = s;
        }
        if let Some(o) = out_override {
            self.out = Some(o);
        }
        if self.out.is_none() {
            self.out = Some("out".into());
        }
        let seed = self.seed;
        if let Some(p) = &mut self.phnn {
            p.train.seed = seed;
        }
        if let Some(e) = &mut self.es {
            e.optimizer.seed = seed;
            e.fitness.seed = seed;
        }
    }

    pub fn section<'a, T>(section: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
        section
            .as_ref()
            .ok_or_else(|| CliError::Validation(format!("configuration needs a `{name}` section")))
    }
}
