use serde::Serialize;
use sphs_core::es::{
    controller_cost, controller_fitness, es_optimize, ControllerSpec, CostBreakdown, EsRun, FitnessConfig,
};
use sphs_core::numeric::matrix_to_rows;

use super::{build_model, Artifacts};
use crate::config::ExperimentConfig;
use crate::error::CliError;

#[derive(Serialize)]
struct Gains {
    #[serde(rename = "K")]
    k: Vec<Vec<f64>>,
    #[serde(rename = "M")]
    m: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct TuneReport {
    plant: String,
    controller: ControllerSpec,
    fitness: FitnessConfig,
    zero_gain_fitness: f64,
    best_fitness: f64,
    gains: Gains,
    #[serde(skip_serializing_if = "Option::is_none")]
    best_cost: Option<CostBreakdown>,
    run: EsRun,
}

pub fn es_tune(cfg: &ExperimentConfig) -> Result<Artifacts, CliError> {
    let section = ExperimentConfig::section(&cfg.es, "es")?;
    let plant = build_model(cfg)?;
    let spec = ControllerSpec::for_model(&plant, section.noise_compensation);
    let n = spec.n_params();
    section.optimizer.validate(n)?;
    let zero = controller_fitness(&vec![0.0; n], &plant, &spec, &section.fitness)?;
    let f = |pi: &[f64]| controller_fitness(pi, &plant, &spec, &section.fitness).unwrap_or(f64::NAN);
    let run = es_optimize(&f, n, &section.optimizer)?;
    let (k, m) = spec.gains(&run.best.pi)?;
    let best_cost = controller_cost(&run.best.pi, &plant, &spec, &section.fitness).ok();
    let mut out = Artifacts::default();
    out.summary = format!("best fitness {:.6} vs zero gains {:.6}", run.best_fitness, zero);
    out.write_with("es_history.csv", |w| run.write_history_csv(w))?;
    out.json(
        "es_report.json",
        &TuneReport {
            plant: plant.name.clone(),
            controller: spec,
            fitness: section.fitness.clone(),
            zero_gain_fitness: zero,
            best_fitness: run.best_fitness,
            gains: Gains {
                k: matrix_to_rows(&k),
                m: matrix_to_rows(&m),
            },
            best_cost,
            run,
        },
    )?;
    Ok(out)
}
