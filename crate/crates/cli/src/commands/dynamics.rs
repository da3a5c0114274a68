use nalgebra::DVector;
use rand::Rng;
use serde::Serialize;
use sphs_core::agents::{
    build_ring_model, compare_covariance, lyapunov_residual, ring_initial_state, sample_moments, sample_states_at,
    stationary_distribution, CovarianceComparison, GaussianLaw, Moments, RingParams,
};
use sphs_core::integrate::{fmt_f64, path_rng, write_ensemble_csv, EnsembleSummary};
use sphs_core::interconnect::{compose_many, coupling_power};
use sphs_core::passivity::{
    audit_paths, discrete_passivity_of_steps, strong_passivity_of_audits, weak_passivity_of_reports, PassivityMode,
    PassivityVerdict,
};
use sphs_core::{simulate as run_ensemble, validate_structure, IntegratorConfig, MatrixField, ModelDefinition, Scheme, ValidationReport, ZeroControl};

use super::{build_model, integrator, state, Artifacts};
use crate::config::ExperimentConfig;
use crate::error::CliError;

pub fn simulate(cfg: &ExperimentConfig) -> Result<Artifacts, CliError> {
    let model = build_model(cfg)?;
    let config = integrator(cfg)?;
    let ens = ExperimentConfig::section(&cfg.ensemble, "ensemble")?;
    let x0 = state(&ens.x0, &model, "ensemble.x0")?;
    let control = model.input_or_zero();
    let ensemble = run_ensemble(&model, control.as_ref(), &x0, ens.horizon, &config, ens.n_paths, cfg.seed)?;
    let summary: EnsembleSummary = ensemble.summary(&model);
    let mut out = Artifacts::default();
    out.write_with("ensemble.csv", |w| write_ensemble_csv(&ensemble, w))?;
    out.json("summary.json", &summary)?;
    out.summary = format!(
        "simulated {} paths of `{}`; max |dH| = {:e}",
        ens.n_paths, model.name, summary.max_abs_energy_change
    );
    Ok(out)
}

pub fn passivity(cfg: &ExperimentConfig) -> Result<Artifacts, CliError> {
    let model = build_model(cfg)?;
    let config = integrator(cfg)?;
    let ens = ExperimentConfig::section(&cfg.ensemble, "ensemble")?;
    let section = ExperimentConfig::section(&cfg.passivity, "passivity")?;
    if section.mode == PassivityMode::Discrete && config.scheme != Scheme::Collocation {
        return Err(CliError::Validation("discrete passivity needs the collocation scheme".into()));
    }
    if section.mode == PassivityMode::Weak && ens.n_paths < 2 {
        return Err(CliError::Validation("weak passivity needs at least two paths".into()));
    }
    let x0 = state(&ens.x0, &model, "ensemble.x0")?;
    let control = model.input_or_zero();
    let record = section.mode == PassivityMode::Discrete;
    let audits = audit_paths(&model, control.as_ref(), &|_| x0.clone(), ens.horizon, &config, ens.n_paths, cfg.seed, record)?;
    let verdict: PassivityVerdict = match section.mode {
        PassivityMode::Strong => strong_passivity_of_audits(&audits),
        PassivityMode::Weak => {
            let reports: Vec<_> = audits.iter().map(|a| a.balance).collect();
            weak_passivity_of_reports(&reports, section.include_noise_supply)?
        }
        PassivityMode::Discrete => {
            let steps: Vec<_> = audits.iter().map(|a| a.steps.clone()).collect();
            discrete_passivity_of_steps(&steps, section.include_noise_supply)?
        }
    };
    let mut out = Artifacts::default();
    out.write_with("audit.csv", |w| {
        use std::io::Write;
        writeln!(
            w,
            "path,delta_h,supply_control,supply_noise,dissipation,residual,max_storage_excess,min_dissipated_energy"
        )?;
        for (p, a) in audits.iter().enumerate() {
            let b = &a.balance;
            let cols = [
                b.delta_h,
                b.supply_control,
                b.supply_noise,
                b.dissipation,
                b.residual,
                a.max_storage_excess,
                a.min_dissipated_energy,
            ];
            let cols: Vec<String> = cols.iter().map(|v| fmt_f64(*v)).collect();
            writeln!(w, "{p},{}", cols.join(","))?;
        }
        Ok(())
    })?;
    out.json("verdict.json", &verdict)?;
    out.summary = format!(
        "{:?} passivity {} (margin {:e}, SE {:e})",
        section.mode,
        if verdict.holds { "holds" } else { "fails" },
        verdict.margin,
        verdict.standard_error
    );
    Ok(out)
}

#[derive(Serialize)]
struct CompositeReport {
    definition: ModelDefinition,
    /// Matrices of the composite evaluated at the check's initial state.
    snapshot: ModelDefinition,
    validation: ValidationReport,
    coupling_power_at_x0: f64,
}

#[derive(Serialize)]
struct ConservationCheck {
    horizon: f64,
    integrator: IntegratorConfig,
    initial_energy: f64,
    final_energy: f64,
    max_abs_energy_change: f64,
    lossless: bool,
    conserved: bool,
}

pub fn interconnect(cfg: &ExperimentConfig) -> Result<Artifacts, CliError> {
    let section = ExperimentConfig::section(&cfg.interconnect, "interconnect")?;
    let parts = section
        .parts
        .iter()
        .map(ModelDefinition::build)
        .collect::<sphs_core::Result<Vec<_>>>()?;
    let composite = compose_many(&parts, &section.coupling, section.reexport_coupled)?;
    let x0 = state(&section.x0, &composite, "interconnect.x0")?;
    let mut rng = path_rng(cfg.seed, 0);
    let mut probes = vec![x0.clone()];
    probes.extend((0..100).map(|_| DVector::from_fn(composite.n, |_, _| rng.random_range(-2.0..2.0))));
    let validation = validate_structure(&composite, &probes)?;
    let power = coupling_power(&parts, &section.coupling, &x0)?;
    let definition = ModelDefinition {
        kind: "composite".into(),
        parts: Some(section.parts.clone()),
        coupling: Some(section.coupling.to_vec()),
        reexport_coupled: section.reexport_coupled,
        ..Default::default()
    };

    // deterministic check: noise switched off, external inputs at zero
    let mut quiet = composite.clone();
    quiet.xi = MatrixField::zeros(composite.n, composite.k);
    let config = IntegratorConfig::collocation(section.h, 1);
    let ensemble = run_ensemble(&quiet, &ZeroControl, &x0, section.horizon, &config, 1, cfg.seed)?;
    let tr = &ensemble.trajectories[0];
    let h0 = quiet.hamiltonian(&tr.states[0]);
    let drift = tr.states.iter().map(|x| (quiet.hamiltonian(x) - h0).abs()).fold(0.0, f64::max);
    let lossless = quiet.r.as_constant().is_some_and(|r| r.amax() == 0.0);
    let check = ConservationCheck {
        horizon: section.horizon,
        integrator: config,
        initial_energy: h0,
        final_energy: quiet.hamiltonian(tr.final_state()),
        max_abs_energy_change: drift,
        lossless,
        conserved: drift <= 1e-9,
    };
    let report = CompositeReport {
        definition,
        snapshot: ModelDefinition::linearized_snapshot(&composite, &x0),
        validation,
        coupling_power_at_x0: power,
    };
    let mut out = Artifacts::default();
    out.summary = format!(
        "composite with n={}, m={}, k={}; structure {}; max |dH| = {:e}",
        composite.n,
        composite.m,
        composite.k,
        if report.validation.is_valid() { "valid" } else { "INVALID" },
        drift
    );
    out.json("composite.json", &report)?;
    out.json("conservation.json", &check)?;
    Ok(out)
}

#[derive(Serialize)]
struct AgentsReport {
    ring: RingParams,
    n_paths: usize,
    horizon: f64,
    integrator: IntegratorConfig,
    law: GaussianLaw,
    lyapunov_residual: f64,
    moments: Moments,
    comparison: CovarianceComparison,
}

pub fn agents(cfg: &ExperimentConfig) -> Result<Artifacts, CliError> {
    let section = ExperimentConfig::section(&cfg.agents, "agents")?;
    let ring = build_ring_model(&section.ring)?;
    let law = stationary_distribution(&ring.drift, &ring.noise)?;
    let residual = lyapunov_residual(&ring.drift, &ring.noise, &law);
    let x0 = ring_initial_state(&ring.params);
    let config = IntegratorConfig::collocation(section.h, 1);
    let samples = sample_states_at(&ring.model, &ZeroControl, &x0, &[section.horizon], &config, section.n_paths, cfg.seed)?;
    let moments = sample_moments(&samples[0])?;
    let comparison = compare_covariance(&law, &moments.covariance);
    let mut out = Artifacts::default();
    out.summary = format!(
        "ring of {} agents: max relative covariance error {:.4} over {} paths",
        section.ring.n_agents, comparison.max_relative_error, section.n_paths
    );
    out.json(
        "agents_report.json",
        &AgentsReport {
            ring: section.ring,
            n_paths: section.n_paths,
            horizon: section.horizon,
            integrator: config,
            law,
            lyapunov_residual: residual,
            moments,
            comparison,
        },
    )?;
    Ok(out)
}
