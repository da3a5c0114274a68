//! Command implementations. Each command builds its artifacts in memory and
//! returns them; nothing touches the output directory unless the whole run
//! succeeds.

mod dynamics;
mod learning;
mod tune;

use std::path::Path;

use serde::Serialize;
use sphs_core::{SphsModel, IntegratorConfig};

use crate::config::ExperimentConfig;
use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Simulate,
    Passivity,
    Interconnect,
    Agents,
    PhnnTrain,
    PhnnEval,
    Poincare,
    EsTune,
}

/// Named output files in write order.
#[derive(Default)]
pub struct Artifacts {
    pub files: Vec<(String, Vec<u8>)>,
    /// One-line summary printed on success.
    pub summary: String,
}

impl Artifacts {
    pub fn json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.files.push((name.to_string(), bytes));
        Ok(())
    }

    pub fn write_with(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Vec<u8>) -> sphs_core::Result<()>,
    ) -> Result<(), CliError> {
        let mut bytes = Vec::new();
        f(&mut bytes)?;
        self.files.push((name.to_string(), bytes));
        Ok(())
    }

    /// Write every file plus the resolved configuration into `dir`.
    pub fn write(&self, dir: &Path, resolved: &ExperimentConfig) -> Result<(), CliError> {
        std::fs::create_dir_all(dir)?;
        let mut snapshot = serde_json::to_vec_pretty(resolved)?;
        snapshot.push(b'\n');
        std::fs::write(dir.join("config.resolved.json"), snapshot)?;
        for (name, bytes) in &self.files {
            std::fs::write(dir.join(name), bytes)?;
        }
        Ok(())
    }
}

pub fn run(command: Command, cfg: &ExperimentConfig) -> Result<Artifacts, CliError> {
    match command {
        Command::Simulate => dynamics::simulate(cfg),
        Command::Passivity => dynamics::passivity(cfg),
        Command::Interconnect => dynamics::interconnect(cfg),
        Command::Agents => dynamics::agents(cfg),
        Command::PhnnTrain => learning::phnn_train(cfg),
        Command::PhnnEval => learning::phnn_eval(cfg),
        Command::Poincare => learning::poincare(cfg),
        Command::EsTune => tune::es_tune(cfg),
    }
}

fn build_model(cfg: &ExperimentConfig) -> Result<SphsModel, CliError> {
    Ok(ExperimentConfig::section(&cfg.model, "model")?.build()?)
}

fn integrator(cfg: &ExperimentConfig) -> Result<IntegratorConfig, CliError> {
    let c = ExperimentConfig::section(&cfg.integrator, "integrator")?.clone();
    c.validate()?;
    Ok(c)
}

fn state(values: &[f64], model: &SphsModel, field: &str) -> Result<nalgebra::DVector<f64>, CliError> {
    if values.len() != model.n {
        return Err(CliError::Validation(format!(
            "`{field}` has {} entries but the model state has {}",
            values.len(),
            model.n
        )));
    }
    let x = nalgebra::DVector::from_column_slice(values);
    model.check_state(&x)?;
    Ok(x)
}
