//! Rollout evaluation of learned vector fields against the true system.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::true_derivative;
use super::network::NetworkModel;
use crate::integrate::{collocation_flow_step, CollocationTableau};
use crate::model::SphsModel;
use crate::systems::KnownPorts;
use crate::{Error, Result};

/// A deterministic vector field `ẋ = f(t, x)`.
pub trait VectorField: Sync {
    fn derivative(&self, t: f64, x: &DVector<f64>, out: &mut DVector<f64>);
}

impl VectorField for NetworkModel {
    fn derivative(&self, t: f64, x: &DVector<f64>, out: &mut DVector<f64>) {
        match self.predict(x.as_slice(), t) {
            Ok(v) => out.copy_from(&v),
            Err(_) => out.fill(f64::NAN),
        }
    }
}

/// The true drift of a model under its default input.
pub struct ModelField<'a>(pub &'a SphsModel);

impl VectorField for ModelField<'_> {
    fn derivative(&self, t: f64, x: &DVector<f64>, out: &mut DVector<f64>) {
        match true_derivative(self.0, x, t) {
            Ok(v) => out.copy_from(&v),
            Err(_) => out.fill(f64::NAN),
        }
    }
}

fn default_horizon() -> f64 {
    10.0
}
fn default_h() -> f64 {
    0.01
}
fn default_stages() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_h")]
    pub h: f64,
    /// Collocation stages used for the learned rollout.
    #[serde(default = "default_stages")]
    pub stages: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            horizon: default_horizon(),
            h: default_h(),
            stages: default_stages(),
        }
    }
}

const ROLLOUT_TOL: f64 = 1e-12;
const ROLLOUT_MAX_ITER: usize = 200;

/// Fixed-step collocation rollout; stops at the first failed or non-finite
/// step. Returns the states reached (starting with `x0`).
pub fn rollout(
    field: &dyn VectorField,
    x0: &DVector<f64>,
    horizon: f64,
    h: f64,
    stages: usize,
) -> Result<(Vec<DVector<f64>>, bool)> {
    let tableau = CollocationTableau::gauss(stages)
        .ok_or_else(|| Error::config("stages", "collocation supports 1 to 3 stages"))?;
    let steps = (horizon / h).round() as usize;
    if steps == 0 || ((steps as f64) * h - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(Error::config("horizon", "horizon must be a positive multiple of h"));
    }
    let f = |t: f64, x: &DVector<f64>, out: &mut DVector<f64>| field.derivative(t, x, out);
    let mut states = vec![x0.clone()];
    for k in 0..steps {
        let x = states.last().expect("non-empty");
        match collocation_flow_step(&f, &tableau, k as f64 * h, h, x, ROLLOUT_TOL, ROLLOUT_MAX_ITER) {
            Ok(next) if next.iter().all(|v| v.is_finite()) => states.push(next),
            _ => return Ok((states, true)),
        }
    }
    Ok((states, false))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReport {
    pub state_mse: f64,
    pub energy_mse: f64,
    /// Steps completed before the rollout stopped.
    pub steps: usize,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    pub config: EvalConfig,
    pub n_trajectories: usize,
    pub state_mse: f64,
    pub energy_mse: f64,
    pub per_trajectory: Vec<TrajectoryReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub force_mse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damping_mse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_abs_force: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_abs_damping: Option<f64>,
    /// Largest `|Ĥ(x̂(T)) − Ĥ(x̂(0))|` over rollouts (energy-based models).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learned_energy_drift: Option<f64>,
}

/// Reference trajectory: 2-stage collocation at half the step, sampled on
/// the evaluation grid.
fn reference(system: &SphsModel, x0: &DVector<f64>, cfg: &EvalConfig) -> Result<Vec<DVector<f64>>> {
    let tableau = CollocationTableau::gauss(2).expect("two stages");
    let field = ModelField(system);
    let f = |t: f64, x: &DVector<f64>, out: &mut DVector<f64>| field.derivative(t, x, out);
    let steps = (cfg.horizon / cfg.h).round() as usize;
    let half = 0.5 * cfg.h;
    let mut out = vec![x0.clone()];
    let mut x = x0.clone();
    for k in 0..2 * steps {
        x = collocation_flow_step(&f, &tableau, k as f64 * half, half, &x, ROLLOUT_TOL, ROLLOUT_MAX_ITER)?;
        if k % 2 == 1 {
            out.push(x.clone());
        }
    }
    Ok(out)
}

/// Roll `field` out from every initial condition and compare against the
/// true system on the evaluation grid (`t = 0` excluded).
pub fn evaluate_field(
    field: &dyn VectorField,
    system: &SphsModel,
    initial_conditions: &[DVector<f64>],
    cfg: &EvalConfig,
) -> Result<(Vec<TrajectoryReport>, Vec<(Vec<DVector<f64>>, Vec<DVector<f64>>)>)> {
    if initial_conditions.is_empty() {
        return Err(Error::config("initial_conditions", "at least one initial condition is required"));
    }
    let runs: Vec<Result<(TrajectoryReport, (Vec<DVector<f64>>, Vec<DVector<f64>>))>> = initial_conditions
        .par_iter()
        .map(|x0| {
            system.check_state(x0)?;
            let truth = reference(system, x0, cfg)?;
            let (pred, diverged) = rollout(field, x0, cfg.horizon, cfg.h, cfg.stages)?;
            let steps = pred.len() - 1;
            let (mut se, mut ee) = (0.0, 0.0);
            for k in 1..=steps {
                se += (&pred[k] - &truth[k]).norm_squared() / system.n as f64;
                ee += (system.hamiltonian(&pred[k]) - system.hamiltonian(&truth[k])).powi(2);
            }
            let denom = steps.max(1) as f64;
            let report = TrajectoryReport {
                state_mse: if steps == 0 { f64::INFINITY } else { se / denom },
                energy_mse: if steps == 0 { f64::INFINITY } else { ee / denom },
                steps,
                diverged,
            };
            Ok((report, (truth, pred)))
        })
        .collect();
    let mut reports = Vec::new();
    let mut paths = Vec::new();
    for r in runs {
        let (rep, p) = r?;
        reports.push(rep);
        paths.push(p);
    }
    Ok((reports, paths))
}

/// Evaluate a trained network; pHNN models are also scored against the
/// known force and damping of the system when `ports` is given.
pub fn evaluate(
    model: &NetworkModel,
    system: &SphsModel,
    ports: Option<&KnownPorts>,
    initial_conditions: &[DVector<f64>],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    if system.n != 2 * model.dof {
        return Err(Error::config("system", "network and system dimensions differ"));
    }
    let (per_trajectory, paths) = evaluate_field(model, system, initial_conditions, cfg)?;
    let n = per_trajectory.len() as f64;
    let state_mse = per_trajectory.iter().map(|r| r.state_mse).sum::<f64>() / n;
    let energy_mse = per_trajectory.iter().map(|r| r.energy_mse).sum::<f64>() / n;
    let mut report = EvalReport {
        kind: Some(model.kind.name().to_string()),
        config: cfg.clone(),
        n_trajectories: per_trajectory.len(),
        state_mse,
        energy_mse,
        per_trajectory,
        force_mse: None,
        damping_mse: None,
        mean_abs_force: None,
        mean_abs_damping: None,
        learned_energy_drift: None,
    };
    if model.kind.has_energy() {
        let drift = paths
            .iter()
            .filter_map(|(_, pred)| {
                let first = model.energy(pred[0].as_slice(), 0.0)?;
                let t_end = (pred.len() - 1) as f64 * cfg.h;
                let last = model.energy(pred.last()?.as_slice(), t_end)?;
                Some((last - first).abs())
            })
            .fold(0.0, f64::max);
        report.learned_energy_drift = Some(drift);
    }
    if model.force.is_some() {
        let (mut f_abs, mut n_abs, mut f_se, mut n_se, mut count) = (0.0, 0.0, 0.0, 0.0, 0usize);
        for (truth, _) in &paths {
            for (k, x) in truth.iter().enumerate() {
                let t = k as f64 * cfg.h;
                let f = model.force_at(t).expect("pHNN");
                let nh = model.damping_at(x.as_slice()).expect("pHNN");
                f_abs += f.iter().map(|v| v.abs()).sum::<f64>() / f.len() as f64;
                n_abs += nh.abs();
                if let Some(p) = ports {
                    let ft = p.force_at(t);
                    f_se += f.iter().map(|v| (v - ft).powi(2)).sum::<f64>() / f.len() as f64;
                    n_se += (nh - p.damping).powi(2);
                }
                count += 1;
            }
        }
        let c = count as f64;
        report.mean_abs_force = Some(f_abs / c);
        report.mean_abs_damping = Some(n_abs / c);
        if ports.is_some() {
            report.force_mse = Some(f_se / c);
            report.damping_mse = Some(n_se / c);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::path_rng;
    use crate::phnn::dataset::sample_annulus;
    use crate::phnn::network::{Architecture, NetworkKind};
    use crate::systems::{make_canonical_system, Params};

    #[test]
    fn oracle_field_error_is_integrator_error() {
        let system = make_canonical_system("simple_spring", &Params::new()).unwrap();
        let mut rng = path_rng(0, 0);
        let ics: Vec<_> = (0..3).map(|_| sample_annulus(2, [0.5, 1.5], &mut rng)).collect();
        let cfg = EvalConfig { horizon: 10.0, h: 1e-3, stages: 1 };
        let (reports, _) = evaluate_field(&ModelField(&system), &system, &ics, &cfg).unwrap();
        for r in reports {
            assert!(r.state_mse < 1e-8, "{r:?}");
            assert!(!r.diverged && r.steps == 10_000);
        }
    }

    #[test]
    fn diverging_field_is_clipped() {
        struct Blowup;
        impl VectorField for Blowup {
            fn derivative(&self, _t: f64, x: &DVector<f64>, out: &mut DVector<f64>) {
                out.copy_from(&x.map(|v| v * v * v * 1e3));
            }
        }
        let (states, diverged) = rollout(&Blowup, &DVector::from_vec(vec![2.0, 2.0]), 1.0, 0.1, 1).unwrap();
        assert!(diverged);
        assert!(states.len() < 11);
    }

    #[test]
    fn report_fields_for_phnn() {
        let mut params = Params::new();
        params.set("delta", 0.3);
        let system = make_canonical_system("damped_spring", &params).unwrap();
        let ports = crate::systems::known_ports("damped_spring", &params).unwrap();
        let mut rng = path_rng(1, 0);
        let model = NetworkModel::new(NetworkKind::Phnn, 1, &Architecture::default(), &mut rng);
        let ics = vec![DVector::from_vec(vec![1.0, 0.0])];
        let cfg = EvalConfig { horizon: 1.0, h: 0.05, stages: 1 };
        let rep = evaluate(&model, &system, Some(&ports), &ics, &cfg).unwrap();
        assert!(rep.state_mse >= 0.0 && rep.energy_mse >= 0.0);
        assert!(rep.force_mse.unwrap() >= 0.0 && rep.damping_mse.unwrap() >= 0.0);
        assert!(rep.learned_energy_drift.is_some());
        let json = serde_json::to_string(&rep).unwrap();
        assert!(json.contains("\"kind\":\"pHNN\""));
    }
}
