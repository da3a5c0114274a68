//! Single-step schemes.
//!
//! All schemes share [`Stepper`], which owns scratch buffers so the inner
//! loop of a simulation does not allocate. Each step also exposes the
//! quadrature nodes the scheme used, so energy balances can be accumulated
//! with the matching rule.

use nalgebra::{DMatrix, DVector};

use super::tableau::CollocationTableau;
use super::{IntegratorConfig, Scheme};
use crate::model::{ControlLaw, SphsModel};
use crate::numeric::all_finite;
use crate::{Error, Result};

/// A state at which a scheme evaluated the vector field, with its weight in
/// the step's quadrature rule.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureNode {
    pub weight: f64,
    pub time: f64,
    pub state: DVector<f64>,
    pub control: DVector<f64>,
}

impl QuadratureNode {
    fn empty(n: usize, m: usize) -> Self {
        Self {
            weight: 0.0,
            time: 0.0,
            state: DVector::zeros(n),
            control: DVector::zeros(m),
        }
    }
}

/// Diagnostics of the last implicit solve.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageDiagnostics {
    pub iterations: usize,
    pub residual: f64,
}

/// Control law returning a fixed vector.
#[derive(Debug, Clone)]
pub struct ConstantControl(pub DVector<f64>);

impl ControlLaw for ConstantControl {
    fn control(&self, _t: f64, _x: &DVector<f64>, out: &mut DVector<f64>) {
        out.copy_from(&self.0);
    }
}

/// Stratonovich→Itô drift adjustment `½ Σᵢ (∂ξᵢ/∂x) ξᵢ(x)`.
///
/// Directional derivatives of each noise column are taken by central
/// differences with step `1e-6`.
pub fn ito_drift_correction(model: &SphsModel, x: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(model.n);
    if model.k == 0 || model.xi.as_constant().is_some() {
        return out;
    }
    const EPS: f64 = 1e-6;
    let xi = model.xi.eval(x);
    for i in 0..model.k {
        let v = xi.column(i);
        let xp = x + v * EPS;
        let xm = x - v * EPS;
        let dp = model.xi.eval(&xp);
        let dm = model.xi.eval(&xm);
        out += (dp.column(i) - dm.column(i)) / (2.0 * EPS);
    }
    out * 0.5
}

/// Reusable integrator state for one path.
pub struct Stepper<'a> {
    model: &'a SphsModel,
    control: &'a dyn ControlLaw,
    config: &'a IntegratorConfig,
    tableau: Option<CollocationTableau>,
    grad: DVector<f64>,
    drift: DVector<f64>,
    drift2: DVector<f64>,
    noise: DVector<f64>,
    predictor: DVector<f64>,
    slopes: Vec<DVector<f64>>,
    new_slopes: Vec<DVector<f64>>,
    nodes: Vec<QuadratureNode>,
    left_control: DVector<f64>,
    pub diagnostics: StageDiagnostics,
}

impl<'a> Stepper<'a> {
    pub fn new(
        model: &'a SphsModel,
        control: &'a dyn ControlLaw,
        config: &'a IntegratorConfig,
    ) -> Result<Self> {
        config.validate()?;
        let (n, m) = (model.n, model.m);
        let tableau = match config.scheme {
            Scheme::Collocation => Some(
                CollocationTableau::gauss(config.stages)
                    .ok_or_else(|| Error::config("stages", "collocation supports 1 to 3 stages"))?,
            ),
            _ => None,
        };
        let node_count = match config.scheme {
            Scheme::EulerMaruyama => 1,
            Scheme::HeunStratonovich => 2,
            Scheme::Collocation => config.stages,
        };
        let s = config.stages;
        Ok(Self {
            model,
            control,
            config,
            tableau,
            grad: DVector::zeros(n),
            drift: DVector::zeros(n),
            drift2: DVector::zeros(n),
            noise: DVector::zeros(n),
            predictor: DVector::zeros(n),
            slopes: vec![DVector::zeros(n); s],
            new_slopes: vec![DVector::zeros(n); s],
            nodes: vec![QuadratureNode::empty(n, m); node_count],
            left_control: DVector::zeros(m),
            diagnostics: StageDiagnostics::default(),
        })
    }

    pub fn nodes(&self) -> &[QuadratureNode] {
        &self.nodes
    }

    /// Control evaluated at the left endpoint of the last step.
    pub fn left_control(&self) -> &DVector<f64> {
        &self.left_control
    }

    pub fn tableau(&self) -> Option<&CollocationTableau> {
        self.tableau.as_ref()
    }

    /// Advance `x` at time `t` by one step with noise increment `dw`.
    pub fn step(
        &mut self,
        t: f64,
        x: &DVector<f64>,
        dw: &DVector<f64>,
        out: &mut DVector<f64>,
    ) -> Result<()> {
        let h = self.config.h;
        self.control.control(t, x, &mut self.left_control);
        match self.config.scheme {
            Scheme::EulerMaruyama => {
                let u = &self.left_control;
                self.model.drift_into(x, u, &mut self.grad, &mut self.drift);
                if self.config.drift_correction {
                    self.drift += ito_drift_correction(self.model, x);
                }
                out.copy_from(x);
                out.axpy(h, &self.drift, 1.0);
                if self.model.k > 0 {
                    out.gemv(1.0, &self.model.xi.eval(x), dw, 1.0);
                }
                let node = &mut self.nodes[0];
                node.weight = 1.0;
                node.time = t;
                node.state.copy_from(x);
                node.control.copy_from(&self.left_control);
            }
            Scheme::HeunStratonovich => {
                let model = self.model;
                model.drift_into(x, &self.left_control, &mut self.grad, &mut self.drift);
                self.predictor.copy_from(x);
                self.predictor.axpy(h, &self.drift, 1.0);
                if model.k > 0 {
                    self.noise.gemv(1.0, &model.xi.eval(x), dw, 0.0);
                    self.predictor += &self.noise;
                }
                let right = &mut self.nodes[1];
                self.control.control(t + h, &self.predictor, &mut right.control);
                model.drift_into(&self.predictor, &right.control, &mut self.grad, &mut self.drift2);
                out.copy_from(x);
                out.axpy(0.5 * h, &self.drift, 1.0);
                out.axpy(0.5 * h, &self.drift2, 1.0);
                if model.k > 0 {
                    out.axpy(0.5, &self.noise, 1.0);
                    out.gemv(0.5, &model.xi.eval(&self.predictor), dw, 1.0);
                }
                let left = &mut self.nodes[0];
                left.weight = 0.5;
                left.time = t;
                left.state.copy_from(x);
                left.control.copy_from(&self.left_control);
                let right = &mut self.nodes[1];
                right.weight = 0.5;
                right.time = t + h;
                right.state.copy_from(out);
            }
            Scheme::Collocation => self.collocation(t, x, dw, out)?,
        }
        if !all_finite(out.as_slice()) {
            return Err(Error::numeric("non-finite state after step", x.as_slice()));
        }
        Ok(())
    }

    /// Slope `h F(t, X, u(t, X)) + ξ(X) ΔW` at a stage; the stage control is
    /// written into `node`.
    fn stage_slope(
        model: &SphsModel,
        control: &dyn ControlLaw,
        h: f64,
        node: &mut QuadratureNode,
        dw: &DVector<f64>,
        grad: &mut DVector<f64>,
        out: &mut DVector<f64>,
    ) {
        control.control(node.time, &node.state, &mut node.control);
        model.drift_into(&node.state, &node.control, grad, out);
        *out *= h;
        if model.k > 0 {
            out.gemv(1.0, &model.xi.eval(&node.state), dw, 1.0);
        }
    }

    fn collocation(
        &mut self,
        t: f64,
        x: &DVector<f64>,
        dw: &DVector<f64>,
        out: &mut DVector<f64>,
    ) -> Result<()> {
        let h = self.config.h;
        let tableau = self.tableau.as_ref().expect("collocation tableau");
        let s = tableau.stages();
        let (model, control) = (self.model, self.control);

        // explicit predictor for every stage
        for j in 0..s {
            let node = &mut self.nodes[j];
            node.weight = tableau.weights[j];
            node.time = t + tableau.nodes[j] * h;
            node.state.copy_from(x);
            Self::stage_slope(model, control, h, node, dw, &mut self.grad, &mut self.slopes[j]);
        }

        let scale = x.amax().max(1.0);
        let mut damping = 1.0;
        let mut previous = f64::INFINITY;
        let mut residual = f64::INFINITY;
        let mut iterations = 0;
        while iterations < self.config.implicit_max_iter {
            iterations += 1;
            for i in 0..s {
                let node = &mut self.nodes[i];
                node.state.copy_from(x);
                for j in 0..s {
                    node.state.axpy(tableau.stage[(i, j)], &self.slopes[j], 1.0);
                }
            }
            residual = 0.0;
            for j in 0..s {
                Self::stage_slope(model, control, h, &mut self.nodes[j], dw, &mut self.grad, &mut self.new_slopes[j]);
                residual = f64::max(residual, (&self.new_slopes[j] - &self.slopes[j]).amax());
            }
            if !residual.is_finite() {
                break;
            }
            if residual > previous {
                damping *= 0.5;
            }
            previous = residual;
            for j in 0..s {
                let (new, old) = (&self.new_slopes[j], &mut self.slopes[j]);
                old.axpy(damping, new, 1.0 - damping);
            }
            if residual <= self.config.implicit_tol * scale {
                break;
            }
        }
        self.diagnostics = StageDiagnostics {
            iterations,
            residual,
        };
        if !(residual <= self.config.implicit_tol * scale) {
            return Err(Error::Integration {
                path: 0,
                step: 0,
                message: format!("stage iteration did not converge in {iterations} iterations"),
                residual,
            });
        }
        // stage states consistent with the accepted slopes
        for i in 0..s {
            let node = &mut self.nodes[i];
            node.state.copy_from(x);
            for j in 0..s {
                node.state.axpy(tableau.stage[(i, j)], &self.slopes[j], 1.0);
            }
        }
        out.copy_from(x);
        for j in 0..s {
            out.axpy(tableau.weights[j], &self.slopes[j], 1.0);
        }
        Ok(())
    }
}

fn one_step(
    model: &SphsModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    t: f64,
    dw: &DVector<f64>,
    config: &IntegratorConfig,
) -> Result<(DVector<f64>, StageDiagnostics)> {
    model.check_state(x)?;
    if dw.len() != model.k {
        return Err(Error::config("dw", format!("expected {} increments", model.k)));
    }
    let control = ConstantControl(u.clone());
    let mut stepper = Stepper::new(model, &control, config)?;
    let mut out = DVector::zeros(model.n);
    stepper.step(t, x, dw, &mut out)?;
    Ok((out, stepper.diagnostics))
}

/// `x' = x + drift(x, u)·h + ξ(x)·ΔW`.
pub fn euler_maruyama_step(
    model: &SphsModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    t: f64,
    h: f64,
    dw: &DVector<f64>,
) -> Result<DVector<f64>> {
    let config = IntegratorConfig::new(Scheme::EulerMaruyama, h);
    one_step(model, x, u, t, dw, &config).map(|r| r.0)
}

/// Heun predictor–corrector, consistent with the Stratonovich reading.
pub fn heun_stratonovich_step(
    model: &SphsModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    t: f64,
    h: f64,
    dw: &DVector<f64>,
) -> Result<DVector<f64>> {
    let config = IntegratorConfig::new(Scheme::HeunStratonovich, h);
    one_step(model, x, u, t, dw, &config).map(|r| r.0)
}

/// One step of `s`-stage Gauss collocation with noise entering every stage
/// through the same quadrature as the effort.
pub fn collocation_step(
    model: &SphsModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    t: f64,
    dw: &DVector<f64>,
    config: &IntegratorConfig,
) -> Result<(DVector<f64>, StageDiagnostics)> {
    if config.scheme != Scheme::Collocation {
        return Err(Error::config("scheme", "collocation_step needs the collocation scheme"));
    }
    one_step(model, x, u, t, dw, config)
}

/// Stage solve of Gauss collocation for an arbitrary deterministic vector
/// field `ẋ = f(t, x)`; used to roll out learned models.
pub fn collocation_flow_step(
    f: &dyn Fn(f64, &DVector<f64>, &mut DVector<f64>),
    tableau: &CollocationTableau,
    t: f64,
    h: f64,
    x: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<DVector<f64>> {
    let s = tableau.stages();
    let n = x.len();
    let mut slopes = vec![DVector::zeros(n); s];
    let mut buf = DVector::zeros(n);
    f(t, x, &mut buf);
    for k in slopes.iter_mut() {
        k.copy_from(&(&buf * h));
    }
    let mut stage = DMatrix::<f64>::zeros(n, s);
    let scale = x.amax().max(1.0);
    let mut residual = f64::INFINITY;
    let mut previous = f64::INFINITY;
    let mut damping = 1.0;
    for _ in 0..max_iter {
        for i in 0..s {
            let mut xi = x.clone();
            for j in 0..s {
                xi.axpy(tableau.stage[(i, j)], &slopes[j], 1.0);
            }
            stage.set_column(i, &xi);
        }
        residual = 0.0;
        let mut fresh = Vec::with_capacity(s);
        for i in 0..s {
            f(t + tableau.nodes[i] * h, &stage.column(i).into_owned(), &mut buf);
            let k = &buf * h;
            residual = f64::max(residual, (&k - &slopes[i]).amax());
            fresh.push(k);
        }
        if !residual.is_finite() {
            break;
        }
        if residual > previous {
            damping *= 0.5;
        }
        previous = residual;
        for (old, new) in slopes.iter_mut().zip(&fresh) {
            old.axpy(damping, new, 1.0 - damping);
        }
        if residual <= tol * scale {
            let mut out = x.clone();
            for (w, k) in tableau.weights.iter().zip(&slopes) {
                out.axpy(*w, k, 1.0);
            }
            return Ok(out);
        }
    }
    Err(Error::Integration {
        path: 0,
        step: 0,
        message: "stage iteration did not converge".into(),
        residual,
    })
}
