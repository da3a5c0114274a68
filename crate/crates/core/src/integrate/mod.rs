//! Stochastic and structure-preserving time integration.
//!
//! * Euler–Maruyama (Itô reading), optionally with the Stratonovich→Itô
//!   drift correction,
//! * Heun predictor–corrector (Stratonovich reading),
//! * Gauss–Legendre collocation with one truncated noise increment per step
//!   entering every stage through the stage quadrature.

mod rng;
mod simulate;
mod step;
mod tableau;

pub use rng::{path_rng, sample_truncated_gaussian};
pub use simulate::{
    integrate_path, simulate, simulate_map, write_ensemble_csv, Ensemble, EnsembleSummary,
    PathObserver, StepView, Trajectory, TrajectoryRecorder,
};
pub use step::{
    collocation_flow_step, collocation_step, euler_maruyama_step, heun_stratonovich_step,
    ito_drift_correction, ConstantControl, QuadratureNode, StageDiagnostics, Stepper,
};
pub use tableau::{gauss_legendre_nodes, CollocationTableau};
pub(crate) use simulate::step_count;
pub use simulate::fmt_f64;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    EulerMaruyama,
    HeunStratonovich,
    Collocation,
}

fn default_stages() -> usize {
    1
}
fn default_bound() -> f64 {
    4.0
}
fn default_tol() -> f64 {
    1e-12
}
fn default_max_iter() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub scheme: Scheme,
    /// Step size.
    pub h: f64,
    /// Collocation stages (1 to 3).
    #[serde(default = "default_stages")]
    pub stages: usize,
    /// Noise increments are truncated at `truncation_bound·√h`.
    #[serde(default = "default_bound")]
    pub truncation_bound: f64,
    #[serde(default = "default_tol")]
    pub implicit_tol: f64,
    #[serde(default = "default_max_iter")]
    pub implicit_max_iter: usize,
    /// Add the Stratonovich→Itô correction to the Euler–Maruyama drift.
    #[serde(default)]
    pub drift_correction: bool,
}

impl IntegratorConfig {
    pub fn new(scheme: Scheme, h: f64) -> Self {
        Self {
            scheme,
            h,
            stages: default_stages(),
            truncation_bound: default_bound(),
            implicit_tol: default_tol(),
            implicit_max_iter: default_max_iter(),
            drift_correction: false,
        }
    }

    pub fn collocation(h: f64, stages: usize) -> Self {
        Self {
            stages,
            ..Self::new(Scheme::Collocation, h)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::config("h", "step size must be positive"));
        }
        if !(1..=3).contains(&self.stages) {
            return Err(Error::config("stages", "stages must be in [1, 3]"));
        }
        if !(self.truncation_bound > 0.0) {
            return Err(Error::config("truncation_bound", "must be positive"));
        }
        if !(self.implicit_tol > 0.0) || self.implicit_max_iter == 0 {
            return Err(Error::config("implicit_tol", "tolerance and iteration cap must be positive"));
        }
        if self.drift_correction && self.scheme != Scheme::EulerMaruyama {
            return Err(Error::config("drift_correction", "only meaningful for euler_maruyama"));
        }
        Ok(())
    }
}
