//! Energy balances along trajectories and passivity verdicts.
//!
//! Along a path the stored energy splits as
//!
//! ```text
//! ΔH = ∫ yᵀu dt  +  ∫ zᵀ∘dW  −  ∫ ∂ₓHᵀ R ∂ₓH dt  +  residual
//!      (control)    (noise)       (dissipation)
//! ```
//!
//! The integrals are evaluated with the quadrature nodes recorded by the
//! integrator, so the residual measures discretization error only. Under
//! Itô (Euler–Maruyama) accounting the noise supply additionally carries
//! `½ tr(ξᵀ∇²Hξ) dt`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::integrate::{
    simulate_map, ito_drift_correction, Ensemble, IntegratorConfig, PathObserver, Scheme,
    StepView, Trajectory,
};
use crate::model::{ControlLaw, SphsModel};
use crate::numeric::{mean_and_standard_error, CompensatedSum};
use crate::{Error, Result};

/// Pathwise tolerance of the strong passivity inequality.
pub const STRONG_TOLERANCE: f64 = 1e-9;
/// Width of the Monte-Carlo acceptance band, in standard errors.
pub const SE_BAND: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Calculus {
    /// Left-point sums plus the Itô Hessian term.
    Ito,
    /// Trapezoid (Heun) or stage (collocation) quadrature.
    Stratonovich,
}

impl Calculus {
    pub fn for_scheme(scheme: Scheme) -> Self {
        match scheme {
            Scheme::EulerMaruyama => Calculus::Ito,
            Scheme::HeunStratonovich | Scheme::Collocation => Calculus::Stratonovich,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub delta_h: f64,
    pub supply_control: f64,
    pub supply_noise: f64,
    /// `−∫ ∂ₓHᵀR∂ₓH dt` (non-positive for PSD `R`).
    pub dissipation: f64,
    pub residual: f64,
}

/// Energy bookkeeping of a single step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepBalance {
    pub delta_h: f64,
    pub supply_control: f64,
    pub supply_noise: f64,
    pub dissipation: f64,
}

/// Streaming energy-balance observer.
pub struct BalanceAccumulator<'m> {
    model: &'m SphsModel,
    calculus: Calculus,
    drift_correction: bool,
    record_steps: bool,
    h_start: f64,
    h_current: f64,
    control: CompensatedSum,
    noise: CompensatedSum,
    dissipation: CompensatedSum,
    max_storage_excess: f64,
    min_dissipated: f64,
    steps: Vec<StepBalance>,
    grad: DVector<f64>,
}

/// Everything one path contributes to the passivity audits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathAudit {
    pub balance: BalanceReport,
    /// `max_{t>0} [H(X_t) − H(X_0) − ∫₀ᵗ uᵀy]`.
    pub max_storage_excess: f64,
    /// `min_t ∫₀ᵗ ∂ₓHᵀR∂ₓH`.
    pub min_dissipated_energy: f64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub steps: Vec<StepBalance>,
}

impl<'m> BalanceAccumulator<'m> {
    pub fn new(model: &'m SphsModel, config: &IntegratorConfig) -> Self {
        Self {
            model,
            calculus: Calculus::for_scheme(config.scheme),
            drift_correction: config.drift_correction,
            record_steps: false,
            h_start: f64::NAN,
            h_current: f64::NAN,
            control: CompensatedSum::new(),
            noise: CompensatedSum::new(),
            dissipation: CompensatedSum::new(),
            max_storage_excess: f64::NEG_INFINITY,
            min_dissipated: 0.0,
            steps: Vec::new(),
            grad: DVector::zeros(model.n),
        }
    }

    pub fn recording_steps(mut self) -> Self {
        self.record_steps = true;
        self
    }

    pub fn report(&self) -> BalanceReport {
        let delta_h = self.h_current - self.h_start;
        let supply_control = self.control.value();
        let supply_noise = self.noise.value();
        let dissipation = self.dissipation.value();
        BalanceReport {
            delta_h,
            supply_control,
            supply_noise,
            dissipation,
            residual: delta_h - supply_control - supply_noise - dissipation,
        }
    }

    pub fn finish(self) -> PathAudit {
        PathAudit {
            balance: self.report(),
            max_storage_excess: self.max_storage_excess,
            min_dissipated_energy: self.min_dissipated,
            steps: self.steps,
        }
    }
}

impl PathObserver for BalanceAccumulator<'_> {
    fn start(&mut self, _t0: f64, x0: &DVector<f64>) {
        self.h_start = self.model.hamiltonian(x0);
        self.h_current = self.h_start;
    }

    fn step(&mut self, view: &StepView<'_>) -> Result<()> {
        let model = self.model;
        let h = view.h;
        let mut step = StepBalance::default();
        for node in view.nodes {
            let x = &node.state;
            model.energy.gradient_into(x, &mut self.grad);
            if model.m > 0 {
                let y = model.g.eval(x).tr_mul(&self.grad);
                step.supply_control += node.weight * h * y.dot(&node.control);
            }
            if !model.r.is_zero() {
                let rg = model.r.eval(x).as_ref() * &self.grad;
                step.dissipation -= node.weight * h * self.grad.dot(&rg);
            }
            if model.k > 0 {
                let z = model.xi.eval(x).tr_mul(&self.grad);
                step.supply_noise += node.weight * z.dot(view.dw);
            }
        }
        if self.calculus == Calculus::Ito && model.k > 0 {
            let x = view.state;
            let xi = model.xi.eval(x);
            let hess = model.energy.hessian(x);
            let trace = (xi.transpose() * hess * xi.as_ref()).trace();
            step.supply_noise += 0.5 * trace * h;
            if self.drift_correction {
                model.energy.gradient_into(x, &mut self.grad);
                step.supply_noise += self.grad.dot(&ito_drift_correction(model, x)) * h;
            }
        }
        let h_next = model.hamiltonian(view.next);
        step.delta_h = h_next - self.h_current;
        self.h_current = h_next;
        self.control.add(step.supply_control);
        self.noise.add(step.supply_noise);
        self.dissipation.add(step.dissipation);
        let excess = (self.h_current - self.h_start) - self.control.value();
        self.max_storage_excess = self.max_storage_excess.max(excess);
        self.min_dissipated = self.min_dissipated.min(-self.dissipation.value());
        if !self.h_current.is_finite() {
            return Err(Error::numeric("non-finite energy", view.next.as_slice()));
        }
        if self.record_steps {
            self.steps.push(step);
        }
        Ok(())
    }
}

fn check_recorded(trajectory: &Trajectory, model: &SphsModel) -> Result<()> {
    if trajectory.states.is_empty() || trajectory.nodes.len() != trajectory.steps() {
        return Err(Error::Contract("trajectory lacks recorded quadrature nodes".into()));
    }
    if trajectory.controls.len() != trajectory.steps()
        || trajectory.noise_increments.iter().any(|w| w.len() != model.k)
    {
        return Err(Error::Contract("trajectory lacks recorded controls or noise increments".into()));
    }
    if trajectory.states[0].len() != model.n {
        return Err(Error::Contract("trajectory does not belong to this model".into()));
    }
    Ok(())
}

fn audit_trajectory(trajectory: &Trajectory, model: &SphsModel, record_steps: bool) -> Result<PathAudit> {
    check_recorded(trajectory, model)?;
    let mut config = IntegratorConfig::new(trajectory.scheme, trajectory.h);
    config.drift_correction = trajectory.drift_correction;
    let mut acc = BalanceAccumulator::new(model, &config);
    if record_steps {
        acc = acc.recording_steps();
    }
    trajectory.replay(&mut acc)?;
    Ok(acc.finish())
}

/// Decompose `ΔH` along a recorded trajectory with the quadrature matching
/// its integration scheme.
pub fn energy_balance(trajectory: &Trajectory, model: &SphsModel) -> Result<BalanceReport> {
    Ok(audit_trajectory(trajectory, model, false)?.balance)
}

/// Like [`energy_balance`], asserting the accounting calculus; mixing Itô
/// accounting with a Stratonovich scheme (or vice versa) is rejected.
pub fn energy_balance_with(
    trajectory: &Trajectory,
    model: &SphsModel,
    calculus: Calculus,
) -> Result<BalanceReport> {
    if Calculus::for_scheme(trajectory.scheme) != calculus {
        return Err(Error::Contract(format!(
            "{calculus:?} accounting does not match the {:?} scheme",
            trajectory.scheme
        )));
    }
    energy_balance(trajectory, model)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassivityMode {
    Strong,
    Weak,
    Discrete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassivityVerdict {
    pub mode: PassivityMode,
    pub holds: bool,
    /// Slack of the defining inequality (negative when violated).
    pub margin: f64,
    pub standard_error: f64,
    pub n_paths: usize,
    /// Strong mode: whether `∫∂ₓHᵀR∂ₓH ≥ 0` held along the path(s).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dissipation_condition: Option<bool>,
    /// Strong mode over an ensemble: number of failing paths.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub failing_paths: Option<usize>,
}

fn strong_from_audits(audits: &[PathAudit]) -> PassivityVerdict {
    let margins: Vec<f64> = audits.iter().map(|a| -a.max_storage_excess).collect();
    let failing = margins.iter().filter(|m| !(**m >= -STRONG_TOLERANCE)).count();
    let margin = margins.iter().copied().fold(f64::INFINITY, f64::min);
    let dissipative = audits.iter().all(|a| a.min_dissipated_energy >= -STRONG_TOLERANCE);
    PassivityVerdict {
        mode: PassivityMode::Strong,
        holds: failing == 0,
        margin,
        standard_error: 0.0,
        n_paths: audits.len(),
        dissipation_condition: Some(dissipative),
        failing_paths: Some(failing),
    }
}

/// Pathwise check of `H(X_t) − H(X_0) ≤ ∫₀ᵗ uᵀy` at every grid time.
pub fn check_strong_passivity(trajectory: &Trajectory, model: &SphsModel) -> Result<PassivityVerdict> {
    let audit = audit_trajectory(trajectory, model, false)?;
    Ok(strong_from_audits(std::slice::from_ref(&audit)))
}

/// Strong verdict over every path of an ensemble (holds iff every path passes).
pub fn strong_passivity_of_audits(audits: &[PathAudit]) -> PassivityVerdict {
    strong_from_audits(audits)
}

/// Monte-Carlo test of `𝔼[H(X_T) − H(X_0) − ∫uᵀy (− ∫zᵀ∘dW)] ≤ 0`.
pub fn weak_passivity_of_reports(reports: &[BalanceReport], include_noise_supply: bool) -> Result<PassivityVerdict> {
    if reports.len() < 2 {
        return Err(Error::Contract("weak passivity needs at least two paths".into()));
    }
    let samples: Vec<f64> = reports
        .iter()
        .map(|r| {
            let mut v = r.delta_h - r.supply_control;
            if include_noise_supply {
                v -= r.supply_noise;
            }
            v
        })
        .collect();
    let (mean, se) = mean_and_standard_error(&samples);
    let margin = -mean;
    Ok(PassivityVerdict {
        mode: PassivityMode::Weak,
        holds: margin >= -(SE_BAND * se + STRONG_TOLERANCE),
        margin,
        standard_error: se,
        n_paths: reports.len(),
        dissipation_condition: None,
        failing_paths: None,
    })
}

pub fn check_weak_passivity(
    ensemble: &Ensemble,
    model: &SphsModel,
    include_noise_supply: bool,
) -> Result<PassivityVerdict> {
    let reports = ensemble
        .trajectories
        .iter()
        .map(|t| energy_balance(t, model))
        .collect::<Result<Vec<_>>>()?;
    weak_passivity_of_reports(&reports, include_noise_supply)
}

/// Per-step test of `𝔼[ΔHᵏ] ≤ h 𝔼[(yᵏ)ᵀuᵏ]` (plus the step noise supply when
/// requested) from per-path step balances.
pub fn discrete_passivity_of_steps(
    per_path: &[Vec<StepBalance>],
    include_noise_supply: bool,
) -> Result<PassivityVerdict> {
    let n_paths = per_path.len();
    let steps = per_path.first().map_or(0, Vec::len);
    if n_paths == 0 || steps == 0 || per_path.iter().any(|p| p.len() != steps) {
        return Err(Error::Contract("discrete passivity needs equal-length step records".into()));
    }
    let mut margin = f64::INFINITY;
    let mut margin_se = 0.0;
    let mut holds = true;
    let mut column = vec![0.0; n_paths];
    for k in 0..steps {
        for (c, path) in column.iter_mut().zip(per_path) {
            let s = &path[k];
            *c = s.delta_h - s.supply_control - if include_noise_supply { s.supply_noise } else { 0.0 };
        }
        let (mean, se) = mean_and_standard_error(&column);
        let step_margin = -mean;
        if !(step_margin >= -(SE_BAND * se + STRONG_TOLERANCE)) {
            holds = false;
        }
        if step_margin < margin {
            margin = step_margin;
            margin_se = se;
        }
    }
    Ok(PassivityVerdict {
        mode: PassivityMode::Discrete,
        holds,
        margin,
        standard_error: margin_se,
        n_paths,
        dissipation_condition: None,
        failing_paths: None,
    })
}

pub fn check_discrete_passivity(
    ensemble: &Ensemble,
    model: &SphsModel,
    include_noise_supply: bool,
) -> Result<PassivityVerdict> {
    if ensemble.config.scheme != Scheme::Collocation {
        return Err(Error::Contract("discrete passivity is defined for collocation ensembles".into()));
    }
    let per_path = ensemble
        .trajectories
        .iter()
        .map(|t| audit_trajectory(t, model, true).map(|a| a.steps))
        .collect::<Result<Vec<_>>>()?;
    discrete_passivity_of_steps(&per_path, include_noise_supply)
}

/// Simulate and audit `n_paths` paths without storing trajectories.
#[allow(clippy::too_many_arguments)]
pub fn audit_paths(
    model: &SphsModel,
    control: &dyn ControlLaw,
    initial: &(dyn Fn(usize) -> DVector<f64> + Sync),
    horizon: f64,
    config: &IntegratorConfig,
    n_paths: usize,
    seed: u64,
    record_steps: bool,
) -> Result<Vec<PathAudit>> {
    simulate_map(
        model,
        control,
        initial,
        horizon,
        config,
        n_paths,
        seed,
        |_| {
            let acc = BalanceAccumulator::new(model, config);
            if record_steps {
                acc.recording_steps()
            } else {
                acc
            }
        },
        |_, acc, _| acc.finish(),
    )
}
