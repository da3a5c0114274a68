//! Path integration, trajectories and Monte-Carlo ensembles.

use std::io::Write;

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rng::{path_rng, sample_truncated_gaussian};
use super::step::{QuadratureNode, Stepper};
use super::{IntegratorConfig, Scheme};
use crate::model::{ControlLaw, SphsModel};
use crate::{Error, Result};

/// Borrowed view of one completed step.
#[derive(Debug, Clone, Copy)]
pub struct StepView<'a> {
    pub index: usize,
    pub t: f64,
    pub h: f64,
    pub state: &'a DVector<f64>,
    pub next: &'a DVector<f64>,
    pub dw: &'a DVector<f64>,
    /// Control at the left endpoint.
    pub control: &'a DVector<f64>,
    pub nodes: &'a [QuadratureNode],
}

/// Receives the steps of a path as they are produced.
pub trait PathObserver {
    fn start(&mut self, _t0: f64, _x0: &DVector<f64>) {}
    fn step(&mut self, view: &StepView<'_>) -> Result<()>;
}

impl<A: PathObserver, B: PathObserver> PathObserver for (A, B) {
    fn start(&mut self, t0: f64, x0: &DVector<f64>) {
        self.0.start(t0, x0);
        self.1.start(t0, x0);
    }

    fn step(&mut self, view: &StepView<'_>) -> Result<()> {
        self.0.step(view)?;
        self.1.step(view)
    }
}

impl PathObserver for () {
    fn step(&mut self, _view: &StepView<'_>) -> Result<()> {
        Ok(())
    }
}

/// A recorded path: `K + 1` states on a uniform grid and, per step, the
/// noise increment, the left-endpoint control and port outputs, and the
/// quadrature nodes used by the scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub scheme: Scheme,
    pub drift_correction: bool,
    pub h: f64,
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub noise_increments: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub outputs_y: Vec<DVector<f64>>,
    pub outputs_z: Vec<DVector<f64>>,
    pub nodes: Vec<Vec<QuadratureNode>>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.noise_increments.len()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory has an initial state")
    }

    /// Feed the recorded steps to an observer.
    pub fn replay(&self, observer: &mut dyn PathObserver) -> Result<()> {
        observer.start(self.times[0], &self.states[0]);
        for k in 0..self.steps() {
            observer.step(&StepView {
                index: k,
                t: self.times[k],
                h: self.h,
                state: &self.states[k],
                next: &self.states[k + 1],
                dw: &self.noise_increments[k],
                control: &self.controls[k],
                nodes: &self.nodes[k],
            })?;
        }
        Ok(())
    }

    /// Steps `[from, to)` as a trajectory of their own.
    pub fn segment(&self, from: usize, to: usize) -> Trajectory {
        Trajectory {
            scheme: self.scheme,
            drift_correction: self.drift_correction,
            h: self.h,
            times: self.times[from..=to].to_vec(),
            states: self.states[from..=to].to_vec(),
            noise_increments: self.noise_increments[from..to].to_vec(),
            controls: self.controls[from..to].to_vec(),
            outputs_y: self.outputs_y[from..to].to_vec(),
            outputs_z: self.outputs_z[from..to].to_vec(),
            nodes: self.nodes[from..to].to_vec(),
        }
    }

    /// Append `other`, which must start where `self` ends.
    pub fn concat(&self, other: &Trajectory) -> Result<Trajectory> {
        if self.scheme != other.scheme || self.h != other.h {
            return Err(Error::Contract("cannot concatenate trajectories of different schemes".into()));
        }
        if self.final_state() != &other.states[0] {
            return Err(Error::Contract("trajectories are not contiguous".into()));
        }
        let mut out = self.clone();
        out.times.extend_from_slice(&other.times[1..]);
        out.states.extend_from_slice(&other.states[1..]);
        out.noise_increments.extend_from_slice(&other.noise_increments);
        out.controls.extend_from_slice(&other.controls);
        out.outputs_y.extend_from_slice(&other.outputs_y);
        out.outputs_z.extend_from_slice(&other.outputs_z);
        out.nodes.extend_from_slice(&other.nodes);
        Ok(out)
    }
}

/// Observer that records a full [`Trajectory`].
pub struct TrajectoryRecorder<'m> {
    model: &'m SphsModel,
    trajectory: Trajectory,
}

impl<'m> TrajectoryRecorder<'m> {
    pub fn new(model: &'m SphsModel, config: &IntegratorConfig) -> Self {
        Self {
            model,
            trajectory: Trajectory {
                scheme: config.scheme,
                drift_correction: config.drift_correction,
                h: config.h,
                times: Vec::new(),
                states: Vec::new(),
                noise_increments: Vec::new(),
                controls: Vec::new(),
                outputs_y: Vec::new(),
                outputs_z: Vec::new(),
                nodes: Vec::new(),
            },
        }
    }

    pub fn finish(self) -> Trajectory {
        self.trajectory
    }
}

impl PathObserver for TrajectoryRecorder<'_> {
    fn start(&mut self, t0: f64, x0: &DVector<f64>) {
        self.trajectory.times.push(t0);
        self.trajectory.states.push(x0.clone());
    }

    fn step(&mut self, view: &StepView<'_>) -> Result<()> {
        let tr = &mut self.trajectory;
        let (y, z) = self.model.port_outputs(view.state);
        tr.times.push(view.t + view.h);
        tr.states.push(view.next.clone());
        tr.noise_increments.push(view.dw.clone());
        tr.controls.push(view.control.clone());
        tr.outputs_y.push(y);
        tr.outputs_z.push(z);
        tr.nodes.push(view.nodes.to_vec());
        Ok(())
    }
}

/// Integrate one path for `steps` steps, drawing truncated increments from
/// `rng`. Returns the final state.
#[allow(clippy::too_many_arguments)]
pub fn integrate_path<R: Rng + ?Sized>(
    model: &SphsModel,
    control: &dyn ControlLaw,
    config: &IntegratorConfig,
    x0: &DVector<f64>,
    t0: f64,
    steps: usize,
    rng: &mut R,
    observer: &mut dyn PathObserver,
) -> Result<DVector<f64>> {
    model.check_state(x0)?;
    let mut stepper = Stepper::new(model, control, config)?;
    let mut x = x0.clone();
    let mut next = DVector::zeros(model.n);
    let mut dw = DVector::zeros(model.k);
    observer.start(t0, x0);
    for index in 0..steps {
        let t = t0 + index as f64 * config.h;
        for w in dw.iter_mut() {
            *w = sample_truncated_gaussian(config.h, config.truncation_bound, rng);
        }
        stepper
            .step(t, &x, &dw, &mut next)
            .map_err(|e| e.at_step(index))?;
        observer.step(&StepView {
            index,
            t,
            h: config.h,
            state: &x,
            next: &next,
            dw: &dw,
            control: stepper.left_control(),
            nodes: stepper.nodes(),
        })?;
        std::mem::swap(&mut x, &mut next);
    }
    Ok(x)
}

pub(crate) fn step_count(horizon: f64, h: f64) -> Result<usize> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::config("horizon", "horizon must be positive"));
    }
    let steps = (horizon / h).round();
    if steps < 1.0 || (steps * h - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(Error::config("horizon", format!("horizon {horizon} is not a multiple of h = {h}")));
    }
    Ok(steps as usize)
}

/// Run `n_paths` independent paths in parallel and reduce each one with its
/// own observer. Results are returned in path order and do not depend on the
/// number of worker threads.
#[allow(clippy::too_many_arguments)]
pub fn simulate_map<O, R>(
    model: &SphsModel,
    control: &dyn ControlLaw,
    initial: &(dyn Fn(usize) -> DVector<f64> + Sync),
    horizon: f64,
    config: &IntegratorConfig,
    n_paths: usize,
    seed: u64,
    make_observer: impl Fn(usize) -> O + Sync,
    finish: impl Fn(usize, O, DVector<f64>) -> R + Sync,
) -> Result<Vec<R>>
where
    O: PathObserver,
    R: Send,
{
    config.validate()?;
    if n_paths == 0 {
        return Err(Error::config("n_paths", "at least one path is required"));
    }
    let steps = step_count(horizon, config.h)?;
    (0..n_paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = path_rng(seed, path as u64);
            let mut observer = make_observer(path);
            let x0 = initial(path);
            let end = integrate_path(model, control, config, &x0, 0.0, steps, &mut rng, &mut observer)
                .map_err(|e| e.on_path(path))?;
            Ok(finish(path, observer, end))
        })
        .collect()
}

/// Monte-Carlo ensemble; trajectory `i` is a pure function of `(seed, i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub seed: u64,
    pub model_name: String,
    pub dims: (usize, usize, usize),
    pub horizon: f64,
    pub config: IntegratorConfig,
    pub trajectories: Vec<Trajectory>,
}

/// Simulate `n_paths` recorded trajectories from `x0` over `[0, horizon]`.
pub fn simulate(
    model: &SphsModel,
    control: &dyn ControlLaw,
    x0: &DVector<f64>,
    horizon: f64,
    config: &IntegratorConfig,
    n_paths: usize,
    seed: u64,
) -> Result<Ensemble> {
    let trajectories = simulate_map(
        model,
        control,
        &|_| x0.clone(),
        horizon,
        config,
        n_paths,
        seed,
        |_| TrajectoryRecorder::new(model, config),
        |_, rec, _| rec.finish(),
    )?;
    Ok(Ensemble {
        seed,
        model_name: model.name.clone(),
        dims: (model.n, model.m, model.k),
        horizon,
        config: config.clone(),
        trajectories,
    })
}

/// JSON-friendly digest of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub model: String,
    pub seed: u64,
    pub n_paths: usize,
    pub horizon: f64,
    pub config: IntegratorConfig,
    pub terminal_mean: Vec<f64>,
    pub terminal_variance: Vec<f64>,
    /// `max |H(X_t) − H(X_0)|` over all paths and grid times.
    pub max_abs_energy_change: f64,
    pub mean_energy_change: f64,
}

impl Ensemble {
    pub fn summary(&self, model: &SphsModel) -> EnsembleSummary {
        let n = self.dims.0;
        let paths = self.trajectories.len();
        let mut mean = vec![0.0; n];
        for tr in &self.trajectories {
            for (m, v) in mean.iter_mut().zip(tr.final_state().iter()) {
                *m += v / paths as f64;
            }
        }
        let mut var = vec![0.0; n];
        if paths > 1 {
            for tr in &self.trajectories {
                for ((s, v), m) in var.iter_mut().zip(tr.final_state().iter()).zip(&mean) {
                    *s += (v - m).powi(2) / (paths - 1) as f64;
                }
            }
        }
        let mut max_change: f64 = 0.0;
        let mut mean_change = 0.0;
        for tr in &self.trajectories {
            let h0 = model.hamiltonian(&tr.states[0]);
            for x in &tr.states {
                max_change = max_change.max((model.hamiltonian(x) - h0).abs());
            }
            mean_change += (model.hamiltonian(tr.final_state()) - h0) / paths as f64;
        }
        EnsembleSummary {
            model: self.model_name.clone(),
            seed: self.seed,
            n_paths: paths,
            horizon: self.horizon,
            config: self.config.clone(),
            terminal_mean: mean,
            terminal_variance: var,
            max_abs_energy_change: max_change,
            mean_energy_change: mean_change,
        }
    }
}

/// Float format used by every CSV artifact: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// One row per `(path, step)`: `path, step, t, x…, u…, y…, z…, dW…`. The row
/// of the final grid point carries the state only.
pub fn write_ensemble_csv(ensemble: &Ensemble, mut w: impl Write) -> Result<()> {
    let (n, m, k) = ensemble.dims;
    let mut header = vec!["path".to_string(), "step".into(), "t".into()];
    header.extend((0..n).map(|i| format!("x{i}")));
    header.extend((0..m).map(|i| format!("u{i}")));
    header.extend((0..m).map(|i| format!("y{i}")));
    header.extend((0..k).map(|i| format!("z{i}")));
    header.extend((0..k).map(|i| format!("dw{i}")));
    writeln!(w, "{}", header.join(","))?;
    for (p, tr) in ensemble.trajectories.iter().enumerate() {
        for (s, (t, x)) in tr.times.iter().zip(&tr.states).enumerate() {
            let mut row = vec![p.to_string(), s.to_string(), fmt_f64(*t)];
            row.extend(x.iter().map(|v| fmt_f64(*v)));
            if s < tr.steps() {
                for vec in [&tr.controls[s], &tr.outputs_y[s], &tr.outputs_z[s], &tr.noise_increments[s]] {
                    row.extend(vec.iter().map(|v| fmt_f64(*v)));
                }
            } else {
                row.extend(std::iter::repeat_n(String::new(), 2 * m + 2 * k));
            }
            writeln!(w, "{}", row.join(","))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ZeroControl;
    use crate::systems::{make_canonical_system, Params};

    #[test]
    fn deterministic_paths_ignore_the_seed() {
        let model = make_canonical_system("stochastic_spring", &Params::from([("sigma", 0.0)])).unwrap();
        let config = IntegratorConfig::new(Scheme::HeunStratonovich, 0.01);
        let x0 = DVector::from_vec(vec![1.0, 0.0]);
        let a = simulate(&model, &ZeroControl, &x0, 1.0, &config, 1, 1).unwrap();
        let b = simulate(&model, &ZeroControl, &x0, 1.0, &config, 1, 2).unwrap();
        assert_eq!(a.trajectories[0].states, b.trajectories[0].states);
    }

    #[test]
    fn same_seed_reproduces_bit_identically() {
        let model = make_canonical_system("stochastic_spring", &Params::from([("sigma", 0.5)])).unwrap();
        let config = IntegratorConfig::collocation(0.01, 2);
        let x0 = DVector::from_vec(vec![1.0, 0.0]);
        let a = simulate(&model, &ZeroControl, &x0, 0.5, &config, 4, 11).unwrap();
        let b = simulate(&model, &ZeroControl, &x0, 0.5, &config, 4, 11).unwrap();
        assert_eq!(a, b);
        let c = simulate(&model, &ZeroControl, &x0, 0.5, &config, 4, 12).unwrap();
        assert_ne!(a.trajectories[0].states, c.trajectories[0].states);
        // path i does not depend on how many paths were requested
        let d = simulate(&model, &ZeroControl, &x0, 0.5, &config, 2, 11).unwrap();
        assert_eq!(a.trajectories[1], d.trajectories[1]);
    }

    #[test]
    fn recorded_increments_are_truncated() {
        let model = make_canonical_system("stochastic_spring", &Params::from([("sigma", 1.0)])).unwrap();
        let mut config = IntegratorConfig::new(Scheme::EulerMaruyama, 0.01);
        config.truncation_bound = 1.5;
        let x0 = DVector::from_vec(vec![0.0, 0.0]);
        let e = simulate(&model, &ZeroControl, &x0, 2.0, &config, 20, 3).unwrap();
        let limit = 1.5 * 0.1;
        for tr in &e.trajectories {
            assert_eq!(tr.steps(), 200);
            assert!(tr.noise_increments.iter().all(|w| w[0].abs() <= limit));
            assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn horizon_must_be_a_multiple_of_h() {
        let model = make_canonical_system("simple_spring", &Params::new()).unwrap();
        let config = IntegratorConfig::new(Scheme::EulerMaruyama, 0.3);
        let x0 = DVector::from_vec(vec![1.0, 0.0]);
        assert!(simulate(&model, &ZeroControl, &x0, 1.0, &config, 1, 0).is_err());
        assert!(simulate(&model, &ZeroControl, &x0, 0.9, &config, 0, 0).is_err());
    }

    #[test]
    fn segments_concatenate_back() {
        let model = make_canonical_system("stochastic_spring", &Params::from([("sigma", 0.3)])).unwrap();
        let config = IntegratorConfig::new(Scheme::HeunStratonovich, 0.1);
        let x0 = DVector::from_vec(vec![1.0, 0.0]);
        let tr = simulate(&model, &ZeroControl, &x0, 2.0, &config, 1, 5).unwrap().trajectories.remove(0);
        let joined = tr.segment(0, 7).concat(&tr.segment(7, 20)).unwrap();
        assert_eq!(joined, tr);
    }

    #[test]
    fn csv_has_one_row_per_grid_point() {
        let model = make_canonical_system("stochastic_spring", &Params::from([("sigma", 0.3)])).unwrap();
        let config = IntegratorConfig::new(Scheme::EulerMaruyama, 0.1);
        let x0 = DVector::from_vec(vec![1.0, 0.0]);
        let e = simulate(&model, &ZeroControl, &x0, 1.0, &config, 2, 5).unwrap();
        let mut buf = Vec::new();
        write_ensemble_csv(&e, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "path,step,t,x0,x1,u0,y0,z0,dw0");
        assert_eq!(lines.len(), 1 + 2 * 11);
        assert!(lines.iter().all(|l| l.split(',').count() == 9));
    }
}
