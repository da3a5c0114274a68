//! Stochastic port-Hamiltonian models in local coordinates.
//!
//! A model is the tuple `(J, R, g, ξ, H)` and defines
//!
//! ```text
//! dX = ((J − R) ∂ₓH(X) + g(X) u) dt + ξ(X) ∘ dW
//! y  = gᵀ(X) ∂ₓH(X)
//! z  = ξᵀ(X) ∂ₓH(X)
//! ```
//!
//! With `k = 0` the model is a deterministic input-state-output PHS.

use std::borrow::Cow;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::numeric::{all_finite, fd_step};
use crate::{Error, Result};

/// State vector of energy variables.
pub type State = DVector<f64>;

/// Energy (Hamiltonian) of a model.
pub trait Hamiltonian: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn value(&self, x: &DVector<f64>) -> f64;

    fn gradient_into(&self, x: &DVector<f64>, out: &mut DVector<f64>);

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim());
        self.gradient_into(x, &mut g);
        g
    }

    /// Hessian; defaults to central differences of the gradient.
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim();
        let step = fd_step(x);
        let mut hess = DMatrix::zeros(n, n);
        let mut xp = x.clone();
        let mut gp = DVector::zeros(n);
        let mut gm = DVector::zeros(n);
        for i in 0..n {
            let orig = xp[i];
            xp[i] = orig + step;
            self.gradient_into(&xp, &mut gp);
            xp[i] = orig - step;
            self.gradient_into(&xp, &mut gm);
            xp[i] = orig;
            hess.set_column(i, &((&gp - &gm) / (2.0 * step)));
        }
        // symmetrize away finite-difference noise
        (&hess + hess.transpose()) * 0.5
    }

    /// The matrix `Q` when `H = ½ xᵀQx`.
    fn quadratic_form(&self) -> Option<&DMatrix<f64>> {
        None
    }
}

/// `H(x) = ½ xᵀ Q x` with symmetric `Q`.
#[derive(Debug, Clone)]
pub struct QuadraticEnergy {
    q: DMatrix<f64>,
}

impl QuadraticEnergy {
    pub fn new(q: DMatrix<f64>) -> Result<Self> {
        if !q.is_square() {
            return Err(Error::config("Q", "energy matrix must be square"));
        }
        if (&q - q.transpose()).amax() > 1e-10 {
            return Err(Error::config("Q", "energy matrix must be symmetric"));
        }
        Ok(Self { q })
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        Self {
            q: DMatrix::from_diagonal(&DVector::from_column_slice(diag)),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }
}

impl Hamiltonian for QuadraticEnergy {
    fn dim(&self) -> usize {
        self.q.nrows()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x))
    }

    fn gradient_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        out.gemv(1.0, &self.q, x, 0.0);
    }

    fn hessian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.q.clone()
    }

    fn quadratic_form(&self) -> Option<&DMatrix<f64>> {
        Some(&self.q)
    }
}

/// One-degree-of-freedom quartic oscillator
/// `H(q, p) = p²/(2m) + a q²/2 + b q⁴/4`.
#[derive(Debug, Clone, Copy)]
pub struct QuarticEnergy {
    pub mass: f64,
    pub linear: f64,
    pub cubic: f64,
}

impl Hamiltonian for QuarticEnergy {
    fn dim(&self) -> usize {
        2
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let (q, p) = (x[0], x[1]);
        p * p / (2.0 * self.mass) + 0.5 * self.linear * q * q + 0.25 * self.cubic * q.powi(4)
    }

    fn gradient_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        let (q, p) = (x[0], x[1]);
        out[0] = self.linear * q + self.cubic * q.powi(3);
        out[1] = p / self.mass;
    }

    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let q = x[0];
        DMatrix::from_row_slice(
            2,
            2,
            &[self.linear + 3.0 * self.cubic * q * q, 0.0, 0.0, 1.0 / self.mass],
        )
    }
}

/// Sum of energies acting on consecutive blocks of the state.
#[derive(Debug, Clone)]
pub struct SumEnergy {
    parts: Vec<Arc<dyn Hamiltonian>>,
    offsets: Vec<usize>,
    dim: usize,
    quadratic: Option<DMatrix<f64>>,
}

impl SumEnergy {
    pub fn new(parts: Vec<Arc<dyn Hamiltonian>>) -> Self {
        let mut offsets = Vec::with_capacity(parts.len());
        let mut dim = 0;
        for p in &parts {
            offsets.push(dim);
            dim += p.dim();
        }
        let quadratic = if parts.iter().all(|p| p.quadratic_form().is_some()) {
            let mut q = DMatrix::zeros(dim, dim);
            for (p, &off) in parts.iter().zip(&offsets) {
                let qp = p.quadratic_form().expect("checked above");
                q.view_mut((off, off), (p.dim(), p.dim())).copy_from(qp);
            }
            Some(q)
        } else {
            None
        };
        Self {
            parts,
            offsets,
            dim,
            quadratic,
        }
    }

    pub fn parts(&self) -> &[Arc<dyn Hamiltonian>] {
        &self.parts
    }

    /// Energy of each part at the split state.
    pub fn part_values(&self, x: &DVector<f64>) -> Vec<f64> {
        self.parts
            .iter()
            .zip(&self.offsets)
            .map(|(p, &off)| p.value(&x.rows(off, p.dim()).into_owned()))
            .collect()
    }
}

impl Hamiltonian for SumEnergy {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        self.part_values(x).iter().sum()
    }

    fn gradient_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        for (p, &off) in self.parts.iter().zip(&self.offsets) {
            let xi = x.rows(off, p.dim()).into_owned();
            let mut gi = DVector::zeros(p.dim());
            p.gradient_into(&xi, &mut gi);
            out.rows_mut(off, p.dim()).copy_from(&gi);
        }
    }

    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.dim, self.dim);
        for (p, &off) in self.parts.iter().zip(&self.offsets) {
            let xi = x.rows(off, p.dim()).into_owned();
            h.view_mut((off, off), (p.dim(), p.dim()))
                .copy_from(&p.hessian(&xi));
        }
        h
    }

    fn quadratic_form(&self) -> Option<&DMatrix<f64>> {
        self.quadratic.as_ref()
    }
}

type ScalarMap = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
type VectorMap = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Energy given by closures; the gradient may be omitted (finite differences).
#[derive(Clone)]
pub struct FnEnergy {
    dim: usize,
    value: ScalarMap,
    gradient: Option<VectorMap>,
}

impl FnEnergy {
    pub fn new(
        dim: usize,
        value: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        gradient: Option<VectorMap>,
    ) -> Self {
        Self {
            dim,
            value: Arc::new(value),
            gradient,
        }
    }
}

impl fmt::Debug for FnEnergy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnEnergy").field("dim", &self.dim).finish()
    }
}

impl Hamiltonian for FnEnergy {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        (self.value)(x)
    }

    fn gradient_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        match &self.gradient {
            Some(g) => out.copy_from(&g(x)),
            None => out.copy_from(&crate::numeric::fd_gradient(&*self.value, x, fd_step(x))),
        }
    }
}

type MatrixMap = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// A matrix-valued function of the state (J, R, g or ξ).
#[derive(Clone)]
pub enum MatrixField {
    Constant(DMatrix<f64>),
    StateDependent {
        rows: usize,
        cols: usize,
        f: MatrixMap,
    },
}

impl MatrixField {
    pub fn state_dependent(
        rows: usize,
        cols: usize,
        f: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        MatrixField::StateDependent {
            rows,
            cols,
            f: Arc::new(f),
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        MatrixField::Constant(DMatrix::zeros(rows, cols))
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            MatrixField::Constant(m) => m.shape(),
            MatrixField::StateDependent { rows, cols, .. } => (*rows, *cols),
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> Cow<'_, DMatrix<f64>> {
        match self {
            MatrixField::Constant(m) => Cow::Borrowed(m),
            MatrixField::StateDependent { f, .. } => Cow::Owned(f(x)),
        }
    }

    pub fn as_constant(&self) -> Option<&DMatrix<f64>> {
        match self {
            MatrixField::Constant(m) => Some(m),
            MatrixField::StateDependent { .. } => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, MatrixField::Constant(m) if m.iter().all(|v| *v == 0.0))
    }
}

impl fmt::Debug for MatrixField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatrixField::Constant(m) => write!(f, "Constant({m})"),
            MatrixField::StateDependent { rows, cols, .. } => {
                write!(f, "StateDependent({rows}x{cols})")
            }
        }
    }
}

/// Source of the control effort `u(t, x)`.
pub trait ControlLaw: Send + Sync {
    fn control(&self, t: f64, x: &DVector<f64>, out: &mut DVector<f64>);
}

impl<F> ControlLaw for F
where
    F: Fn(f64, &DVector<f64>, &mut DVector<f64>) + Send + Sync,
{
    fn control(&self, t: f64, x: &DVector<f64>, out: &mut DVector<f64>) {
        self(t, x, out)
    }
}

/// `u ≡ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroControl;

impl ControlLaw for ZeroControl {
    fn control(&self, _t: f64, _x: &DVector<f64>, out: &mut DVector<f64>) {
        out.fill(0.0);
    }
}

/// Output-feedback law `u = −K x + M z` where `z = ξᵀ∂ₓH` is the noise-port
/// effort.
#[derive(Clone)]
pub struct LinearFeedback {
    pub state_gain: DMatrix<f64>,
    pub noise_gain: DMatrix<f64>,
    model: SphsModel,
}

impl LinearFeedback {
    pub fn new(model: &SphsModel, state_gain: DMatrix<f64>, noise_gain: DMatrix<f64>) -> Result<Self> {
        if state_gain.shape() != (model.m, model.n) {
            return Err(Error::config("K", format!("expected {}x{} gain", model.m, model.n)));
        }
        if noise_gain.shape() != (model.m, model.k) {
            return Err(Error::config("M", format!("expected {}x{} gain", model.m, model.k)));
        }
        Ok(Self {
            state_gain,
            noise_gain,
            model: model.clone(),
        })
    }
}

impl ControlLaw for LinearFeedback {
    fn control(&self, _t: f64, x: &DVector<f64>, out: &mut DVector<f64>) {
        out.gemv(-1.0, &self.state_gain, x, 0.0);
        if self.model.k > 0 {
            let (_, z) = self.model.port_outputs(x);
            out.gemv(1.0, &self.noise_gain, &z, 1.0);
        }
    }
}

/// A stochastic port-Hamiltonian model; immutable after construction.
#[derive(Clone)]
pub struct SphsModel {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub j: MatrixField,
    pub r: MatrixField,
    pub g: MatrixField,
    pub xi: MatrixField,
    pub energy: Arc<dyn Hamiltonian>,
    default_input: Option<Arc<dyn ControlLaw>>,
}

impl fmt::Debug for SphsModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SphsModel")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m", &self.m)
            .field("k", &self.k)
            .field("energy", &self.energy)
            .finish()
    }
}

impl SphsModel {
    /// Build a model, checking that `J, R` are `n×n`, `g` is `n×m` and `ξ` is
    /// `n×k`.
    pub fn new(
        name: impl Into<String>,
        j: MatrixField,
        r: MatrixField,
        g: MatrixField,
        xi: MatrixField,
        energy: Arc<dyn Hamiltonian>,
    ) -> Result<Self> {
        let n = energy.dim();
        let check = |field: &str, f: &MatrixField, rows: usize, cols: Option<usize>| {
            let (r, c) = f.shape();
            if r != rows || cols.is_some_and(|cc| cc != c) {
                return Err(Error::config(
                    field,
                    format!("shape {r}x{c} inconsistent with state dimension {n}"),
                ));
            }
            Ok(c)
        };
        check("J", &j, n, Some(n))?;
        check("R", &r, n, Some(n))?;
        let m = check("g", &g, n, None)?;
        let k = check("xi", &xi, n, None)?;
        Ok(Self {
            name: name.into(),
            n,
            m,
            k,
            j,
            r,
            g,
            xi,
            energy,
            default_input: None,
        })
    }

    /// Attach the input signal a model carries by default (e.g. a periodic
    /// forcing through the g-port).
    pub fn with_default_input(mut self, input: Arc<dyn ControlLaw>) -> Self {
        self.default_input = Some(input);
        self
    }

    pub fn default_input(&self) -> Option<&Arc<dyn ControlLaw>> {
        self.default_input.as_ref()
    }

    /// The model's default input, or `u ≡ 0`.
    pub fn input_or_zero(&self) -> Arc<dyn ControlLaw> {
        self.default_input
            .clone()
            .unwrap_or_else(|| Arc::new(ZeroControl))
    }

    pub fn hamiltonian(&self, x: &DVector<f64>) -> f64 {
        self.energy.value(x)
    }

    /// `(J − R) ∂ₓH + g u` written into `out`; `grad` receives `∂ₓH`.
    pub fn drift_into(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        grad: &mut DVector<f64>,
        out: &mut DVector<f64>,
    ) {
        self.energy.gradient_into(x, grad);
        out.gemv(1.0, &self.j.eval(x), grad, 0.0);
        if !self.r.is_zero() {
            out.gemv(-1.0, &self.r.eval(x), grad, 1.0);
        }
        if self.m > 0 {
            out.gemv(1.0, &self.g.eval(x), u, 1.0);
        }
    }

    /// Drift and diffusion at `(x, u, t)`.
    pub fn eval_dynamics(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        _t: f64,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.check_state(x)?;
        if u.len() != self.m {
            return Err(Error::config("u", format!("expected {} controls, got {}", self.m, u.len())));
        }
        let mut grad = DVector::zeros(self.n);
        let mut drift = DVector::zeros(self.n);
        self.drift_into(x, u, &mut grad, &mut drift);
        let diffusion = self.xi.eval(x).into_owned();
        if !all_finite(drift.as_slice()) || !all_finite(diffusion.as_slice()) {
            return Err(Error::numeric("non-finite drift or diffusion", x.as_slice()));
        }
        Ok((drift, diffusion))
    }

    /// Control-port output `y = gᵀ∂ₓH` and noise-port effort `z = ξᵀ∂ₓH`.
    pub fn port_outputs(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let grad = self.energy.gradient(x);
        let y = self.g.eval(x).tr_mul(&grad);
        let z = self.xi.eval(x).tr_mul(&grad);
        (y, z)
    }

    pub fn check_state(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::config(
                "state",
                format!("expected length {}, got {}", self.n, x.len()),
            ));
        }
        if !all_finite(x.as_slice()) {
            return Err(Error::numeric("non-finite state", x.as_slice()));
        }
        Ok(())
    }

    /// `(J − R)` and `Q` when the model is linear with quadratic energy.
    pub fn linear_drift(&self) -> Option<DMatrix<f64>> {
        let q = self.energy.quadratic_form()?;
        let j = self.j.as_constant()?;
        let r = self.r.as_constant()?;
        Some((j - r) * q)
    }
}

/// Control, noise outputs and state recomputed from a model; see
/// [`SphsModel::port_outputs`].
#[derive(Debug, Clone, PartialEq)]
pub struct PortSignals {
    pub u: DVector<f64>,
    pub y: DVector<f64>,
    pub z: DVector<f64>,
}

impl PortSignals {
    pub fn at(model: &SphsModel, x: &DVector<f64>, u: DVector<f64>) -> Self {
        let (y, z) = model.port_outputs(x);
        Self { u, y, z }
    }
}

/// Canonical symplectic matrix `[[0, I], [−I, 0]]` of size `2d`.
pub fn symplectic(d: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        j[(i, d + i)] = 1.0;
        j[(d + i, i)] = -1.0;
    }
    j
}
