use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sphs_core::phnn::{
    dispersion, evaluate, field_section, generate_dataset, train, write_section_csv, Dataset, Dispersion, EvalReport,
    ModelField, NetworkKind, NetworkModel,
};
use sphs_core::systems::known_ports;
use sphs_core::{make_canonical_system, Params};

use super::{build_model, state, Artifacts};
use crate::config::{ExperimentConfig, PhnnSection};
use crate::error::CliError;

fn model_file(kind: NetworkKind) -> String {
    format!("model_{}.json", kind.name())
}

fn unique_kinds(section: &PhnnSection) -> Result<Vec<NetworkKind>, CliError> {
    let mut kinds = Vec::new();
    for k in &section.kinds {
        if kinds.contains(k) {
            return Err(CliError::Validation(format!("network kind `{}` listed twice", k.name())));
        }
        kinds.push(*k);
    }
    if kinds.is_empty() {
        return Err(CliError::Validation("`phnn.kinds` is empty".into()));
    }
    Ok(kinds)
}

#[derive(Serialize)]
struct TrainSummary {
    kind: NetworkKind,
    n_params: usize,
    initial_loss: f64,
    final_loss: f64,
}

pub fn phnn_train(cfg: &ExperimentConfig) -> Result<Artifacts, CliError> {
    let section = ExperimentConfig::section(&cfg.phnn, "phnn")?;
    let kinds = unique_kinds(section)?;
    section.train.validate()?;
    let dataset = generate_dataset(&section.system, &section.params, &section.dataset, cfg.seed)?;
    let mut out = Artifacts::default();
    out.write_with("dataset.csv", |w| dataset.write_csv(w))?;
    let mut summary = Vec::new();
    for kind in kinds {
        log::info!("training {}", kind.name());
        let outcome = train(kind, &dataset, &section.train)?;
        out.json(&model_file(kind), &outcome.model)?;
        out.write_with(&format!("loss_{}.csv", kind.name()), |w| {
            use std::io::Write;
            writeln!(w, "epoch,loss")?;
            for (e, l) in outcome.history.iter().enumerate() {
                writeln!(w, "{e},{}", sphs_core::integrate::fmt_f64(*l))?;
            }
            Ok(())
        })?;
        summary.push(TrainSummary {
            kind,
            n_params: outcome.model.n_params(),
            initial_loss: outcome.history[0],
            final_loss: *outcome.history.last().expect("non-empty history"),
        });
    }
    out.summary = summary
        .iter()
        .map(|s| format!("{} loss {:.3e}", s.kind.name(), s.final_loss))
        .collect::<Vec<_>>()
        .join(", ");
    out.json("train_summary.json", &summary)?;
    Ok(out)
}

#[derive(Serialize)]
struct TableRow {
    kind: String,
    state_mse: f64,
    energy_mse: f64,
    force_mse: Option<f64>,
    damping_mse: Option<f64>,
    diverged: usize,
}

#[derive(Serialize)]
struct EvalBundle {
    system: String,
    params: Params,
    n_trajectories: usize,
    table: Vec<TableRow>,
    reports: Vec<EvalReport>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

pub fn phnn_eval(cfg: &ExperimentConfig) -> Result<Artifacts, CliError> {
    let section = ExperimentConfig::section(&cfg.phnn, "phnn")?;
    let kinds = unique_kinds(section)?;
    let bundle = PathBuf::from(
        section
            .bundle
            .as_ref()
            .ok_or_else(|| CliError::Validation("`phnn.bundle` must name a phnn-train output directory".into()))?,
    );
    let data_path = bundle.join("dataset.csv");
    let file = std::fs::File::open(&data_path)
        .map_err(|e| CliError::Validation(format!("{}: {e}", data_path.display())))?;
    let dataset = Dataset::read_csv(BufReader::new(file))?;
    let ics = dataset.test_initial_conditions();
    if ics.is_empty() {
        return Err(CliError::Validation("the bundle dataset has no test trajectories".into()));
    }
    let truth = make_canonical_system(&section.system, &section.params)?;
    let ports = known_ports(&section.system, &section.params).ok();
    let mut reports = Vec::new();
    for kind in kinds {
        let model: NetworkModel = read_json(&bundle.join(model_file(kind)))?;
        model.check()?;
        if model.kind != kind {
            return Err(CliError::Validation(format!("{} holds a {} model", model_file(kind), model.kind.name())));
        }
        reports.push(evaluate(&model, &truth, ports.as_ref(), &ics, &section.eval)?);
    }
    let table: Vec<TableRow> = reports
        .iter()
        .map(|r| TableRow {
            kind: r.kind.clone().unwrap_or_default(),
            state_mse: r.state_mse,
            energy_mse: r.energy_mse,
            force_mse: r.force_mse,
            damping_mse: r.damping_mse,
            diverged: r.per_trajectory.iter().filter(|t| t.diverged).count(),
        })
        .collect();
    let mut out = Artifacts::default();
    out.summary = table
        .iter()
        .map(|r| format!("{} state_mse {:.3e}", r.kind, r.state_mse))
        .collect::<Vec<_>>()
        .join(", ");
    out.write_with("eval_table.csv", |w| {
        use std::io::Write;
        use sphs_core::integrate::fmt_f64;
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        writeln!(w, "kind,state_mse,energy_mse,force_mse,damping_mse,diverged")?;
        for r in &table {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.kind,
                fmt_f64(r.state_mse),
                fmt_f64(r.energy_mse),
                opt(r.force_mse),
                opt(r.damping_mse),
                r.diverged
            )?;
        }
        Ok(())
    })?;
    out.json(
        "eval_report.json",
        &EvalBundle {
            system: section.system.clone(),
            params: section.params.clone(),
            n_trajectories: ics.len(),
            table,
            reports,
        },
    )?;
    Ok(out)
}

#[derive(Serialize)]
struct SectionReport {
    period: f64,
    n_periods: usize,
    steps_per_period: usize,
    transient: usize,
    truth: Dispersion,
    #[serde(skip_serializing_if = "Option::is_none")]
    learned: Option<Dispersion>,
    #[serde(skip_serializing_if = "Option::is_none")]
    learned_error: Option<String>,
}

pub fn poincare(cfg: &ExperimentConfig) -> Result<Artifacts, CliError> {
    let section = ExperimentConfig::section(&cfg.poincare, "poincare")?;
    let definition = ExperimentConfig::section(&cfg.model, "model")?;
    let model = build_model(cfg)?;
    let period = match section.period {
        Some(p) => p,
        None => known_ports(&definition.kind, &definition.params)
            .ok()
            .and_then(|p| p.force)
            .map(|f| f.period())
            .ok_or_else(|| CliError::Validation("`poincare.period` is required for unforced or custom models".into()))?,
    };
    let x0 = state(&section.x0, &model, "poincare.x0")?;
    let learned: Option<NetworkModel> = match &section.learned {
        Some(path) => {
            let m: NetworkModel = read_json(Path::new(path))?;
            m.check()?;
            if 2 * m.dof != model.n {
                return Err(CliError::Validation("learned model and system dimensions differ".into()));
            }
            Some(m)
        }
        None => None,
    };
    let points = field_section(
        &ModelField(&model),
        &x0,
        period,
        section.n_periods,
        section.steps_per_period,
        2,
        section.transient,
    )?;
    let mut out = Artifacts::default();
    out.write_with("section.csv", |w| write_section_csv(&points, w))?;
    let truth = dispersion(&points, section.cluster_radius);
    let mut report = SectionReport {
        period,
        n_periods: section.n_periods,
        steps_per_period: section.steps_per_period,
        transient: section.transient,
        truth,
        learned: None,
        learned_error: None,
    };
    if let Some(net) = &learned {
        match field_section(net, &x0, period, section.n_periods, section.steps_per_period, 1, section.transient) {
            Ok(pts) => {
                out.write_with("section_learned.csv", |w| write_section_csv(&pts, w))?;
                report.learned = Some(dispersion(&pts, section.cluster_radius));
            }
            Err(e) => report.learned_error = Some(e.to_string()),
        }
    }
    out.summary = format!(
        "{} section points, {} clusters",
        report.truth.n_points, report.truth.clusters
    );
    out.json("section_report.json", &report)?;
    Ok(out)
}
