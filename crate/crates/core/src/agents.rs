//! Stochastic agent ring with quadratic interaction potential and the
//! Gaussian stationary law of its linear dynamics.
//!
//! State `Z = (Q, p) ∈ ℝ²ᴺ`, indices modulo `N`:
//!
//! ```text
//! dQₙ = (pₙ₊₁ − pₙ) dt
//! dpₙ = (U′(Qₙ) − U′(Qₙ₋q)) dt + β (pₙ₊₁ − 2pₙ + pₙ₋₁) dt + σ dWₙ
//! ```
//!
//! with `U(x) = (αx)²/2`. For `q = 1` this is `(J − R)∇H` with
//! `H = ½α²ΣQₙ² + ½Σpₙ²`, `J = [[0, A], [−Aᵀ, 0]]`, `(Ap)ₙ = pₙ₊₁ − pₙ` and
//! `R = blockdiag(0, βL)` for the ring Laplacian `L`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::integrate::{simulate_map, Ensemble, IntegratorConfig, PathObserver, StepView};
use crate::model::{ControlLaw, MatrixField, QuadraticEnergy, SphsModel};
use crate::{Error, Result};

fn default_offset() -> i64 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingParams {
    pub n_agents: usize,
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
    #[serde(default = "default_offset")]
    pub interaction_offset: i64,
}

impl RingParams {
    pub fn new(n_agents: usize, alpha: f64, beta: f64, sigma: f64) -> Self {
        Self {
            n_agents,
            alpha,
            beta,
            sigma,
            interaction_offset: 1,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_agents < 2 {
            return Err(Error::config("n_agents", "the ring needs at least two agents"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("alpha", "stiffness must be positive"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::config("beta", "dissipation rate must be non-negative"));
        }
        if !self.sigma.is_finite() {
            return Err(Error::config("sigma", "noise intensity must be finite"));
        }
        Ok(())
    }
}

/// The ring as a model together with its linear form `dZ = BZ dt + G dW`.
#[derive(Debug, Clone)]
pub struct RingModel {
    pub params: RingParams,
    pub model: SphsModel,
    pub drift: DMatrix<f64>,
    pub noise: DMatrix<f64>,
}

/// Difference operator `(A v)ₙ = v₍ₙ₊ₛ₎ − vₙ` on the ring.
fn shift_difference(n: usize, shift: i64) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        let j = (i as i64 + shift).rem_euclid(n as i64) as usize;
        a[(i, j)] += 1.0;
        a[(i, i)] -= 1.0;
    }
    a
}

/// Ring graph Laplacian (`2` on the diagonal, `−1` for both neighbours).
pub fn ring_laplacian(n: usize) -> DMatrix<f64> {
    let a = shift_difference(n, 1);
    a.transpose() * a
}

pub fn build_ring_model(params: &RingParams) -> Result<RingModel> {
    params.validate()?;
    let n = params.n_agents;
    let a = shift_difference(n, 1);
    let aq = shift_difference(n, params.interaction_offset);
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    j.view_mut((0, n), (n, n)).copy_from(&a);
    j.view_mut((n, 0), (n, n)).copy_from(&(-aq.transpose()));
    let mut r = DMatrix::zeros(2 * n, 2 * n);
    r.view_mut((n, n), (n, n)).copy_from(&(ring_laplacian(n) * params.beta));
    let mut xi = DMatrix::zeros(2 * n, n);
    xi.view_mut((n, 0), (n, n)).fill_diagonal(params.sigma);
    let mut q_diag = vec![params.alpha * params.alpha; n];
    q_diag.extend(std::iter::repeat_n(1.0, n));
    let energy = QuadraticEnergy::diagonal(&q_diag);
    let drift = (&j - &r) * energy.matrix();
    let model = SphsModel::new(
        "agent_ring",
        MatrixField::Constant(j),
        MatrixField::Constant(r),
        MatrixField::zeros(2 * n, 0),
        MatrixField::Constant(xi.clone()),
        Arc::new(energy),
    )?;
    Ok(RingModel {
        params: *params,
        model,
        drift,
        noise: xi,
    })
}

/// Default initial condition: positions equally spaced on `[0, 1)`, `p = 0`.
pub fn ring_initial_state(params: &RingParams) -> DVector<f64> {
    let n = params.n_agents;
    DVector::from_fn(2 * n, |i, _| if i < n { i as f64 / n as f64 } else { 0.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianLaw {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// Orthonormal basis of the stable subspace (columns).
    pub stable_basis: DMatrix<f64>,
    /// Orthonormal basis of the right kernel of `B` (neutral directions).
    pub neutral: DMatrix<f64>,
    /// Orthonormal basis of the left kernel of `B` (conserved linear forms).
    pub conserved: DMatrix<f64>,
}

impl GaussianLaw {
    /// Covariance expressed in the stable basis.
    pub fn reduced_covariance(&self) -> DMatrix<f64> {
        self.stable_basis.tr_mul(&self.covariance) * &self.stable_basis
    }
}

const KERNEL_TOL: f64 = 1e-10;

fn columns(m: &DMatrix<f64>, keep: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), keep.len(), |i, j| m[(i, keep[j])])
}

/// Solve `A X + X Aᵀ + C = 0` for Hurwitz `A` by the matrix sign iteration.
pub fn solve_lyapunov(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut ak = a.clone();
    let mut ck = c.clone();
    let identity = DMatrix::<f64>::identity(n, n);
    for _ in 0..200 {
        let inv = ak
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::numeric("singular matrix in Lyapunov iteration", &[]))?;
        ck = (&ck + &inv * &ck * inv.transpose()) * 0.5;
        ak = (&ak + &inv) * 0.5;
        if (&ak + &identity).amax() <= 1e-14 * n as f64 {
            let x = ck * 0.5;
            return Ok((&x + x.transpose()) * 0.5);
        }
    }
    Err(Error::numeric("Lyapunov iteration did not converge", &[]))
}

/// Stationary Gaussian law of `dZ = BZ dt + G dW` on the stable subspace.
///
/// Directions in the left kernel of `B` are conserved and carry no
/// stationary law; the remaining subspace (the range of `B`, invariant under
/// `B`) must be asymptotically stable.
pub fn stationary_distribution(b: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<GaussianLaw> {
    let n = b.nrows();
    if b.ncols() != n || g.nrows() != n {
        return Err(Error::config("B", "drift must be square and match the noise rows"));
    }
    let svd = b.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested");
    let v_t = svd.v_t.as_ref().expect("requested");
    let scale = svd.singular_values.max().max(1.0);
    let (mut range, mut kernel) = (Vec::new(), Vec::new());
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s > KERNEL_TOL * scale {
            range.push(i);
        } else {
            kernel.push(i);
        }
    }
    let stable_basis = columns(u, &range);
    let conserved = columns(u, &kernel);
    let neutral = columns(&v_t.transpose(), &kernel);
    let covariance = if range.is_empty() {
        DMatrix::zeros(n, n)
    } else {
        let br = stable_basis.tr_mul(b) * &stable_basis;
        let worst = br
            .complex_eigenvalues()
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max);
        if worst >= -KERNEL_TOL * scale {
            return Err(Error::Instability { real_part: worst });
        }
        let gr = stable_basis.tr_mul(g);
        let sigma = solve_lyapunov(&br, &(&gr * gr.transpose()))?;
        &stable_basis * sigma * stable_basis.transpose()
    };
    Ok(GaussianLaw {
        mean: DVector::zeros(n),
        covariance: (&covariance + covariance.transpose()) * 0.5,
        stable_basis,
        neutral,
        conserved,
    })
}

/// `‖Vᵀ(BΣ + ΣBᵀ + GGᵀ)V‖∞` over the stable basis `V`.
pub fn lyapunov_residual(b: &DMatrix<f64>, g: &DMatrix<f64>, law: &GaussianLaw) -> f64 {
    let s = &law.covariance;
    let full = b * s + s * b.transpose() + g * g.transpose();
    let v = &law.stable_basis;
    (v.tr_mul(&full) * v).amax()
}

/// Sample moments with standard errors; the covariance errors are jackknife
/// estimates (NaN with fewer than three samples).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n_samples: usize,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub mean_se: DVector<f64>,
    pub covariance_se: DMatrix<f64>,
}

pub fn sample_moments(samples: &[DVector<f64>]) -> Result<Moments> {
    let count = samples.len();
    if count < 2 {
        return Err(Error::Contract("moments need at least two samples".into()));
    }
    let d = samples[0].len();
    let nf = count as f64;
    let mut mean = DVector::zeros(d);
    for s in samples {
        mean += s;
    }
    mean /= nf;
    let devs: Vec<DVector<f64>> = samples.iter().map(|s| s - &mean).collect();
    let mut scatter = DMatrix::zeros(d, d);
    for dv in &devs {
        scatter.ger(1.0, dv, dv, 1.0);
    }
    let covariance = &scatter / (nf - 1.0);
    let mean_se = covariance.diagonal().map(|v| (v / nf).sqrt());
    let covariance_se = if count < 3 {
        DMatrix::from_element(d, d, f64::NAN)
    } else {
        // leave-one-out: S₋ᵢ = S − n/(n−1)·dᵢdᵢᵀ, C₋ᵢ = S₋ᵢ/(n−2)
        let loo = |dv: &DVector<f64>, i: usize, j: usize| {
            (scatter[(i, j)] - nf / (nf - 1.0) * dv[i] * dv[j]) / (nf - 2.0)
        };
        let mut se = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let reps: Vec<f64> = devs.iter().map(|dv| loo(dv, i, j)).collect();
                let avg = reps.iter().sum::<f64>() / nf;
                let ss: f64 = reps.iter().map(|r| (r - avg).powi(2)).sum();
                let v = ((nf - 1.0) / nf * ss).sqrt();
                se[(i, j)] = v;
                se[(j, i)] = v;
            }
        }
        se
    };
    Ok(Moments {
        n_samples: count,
        mean,
        covariance,
        mean_se,
        covariance_se,
    })
}

/// Moments of the ensemble states at grid time `t`.
pub fn empirical_moments(ensemble: &Ensemble, t: f64) -> Result<Moments> {
    let first = ensemble
        .trajectories
        .first()
        .ok_or_else(|| Error::Contract("empty ensemble".into()))?;
    let tol = 1e-9 * t.abs().max(1.0);
    let index = first
        .times
        .iter()
        .position(|s| (s - t).abs() <= tol)
        .ok_or_else(|| Error::config("t", format!("{t} is not on the time grid")))?;
    let states: Vec<_> = ensemble.trajectories.iter().map(|tr| tr.states[index].clone()).collect();
    sample_moments(&states)
}

/// Observer keeping the states reached after the given step counts.
#[derive(Debug, Clone, Default)]
pub struct StateSnapshots {
    at: Vec<usize>,
    pub states: Vec<DVector<f64>>,
}

impl StateSnapshots {
    pub fn new(mut at: Vec<usize>) -> Self {
        at.sort_unstable();
        Self {
            at,
            states: Vec::new(),
        }
    }
}

impl PathObserver for StateSnapshots {
    fn step(&mut self, view: &StepView<'_>) -> Result<()> {
        if self.at.binary_search(&(view.index + 1)).is_ok() {
            self.states.push(view.next.clone());
        }
        Ok(())
    }
}

/// Simulate without recording and return, per requested time, the states of
/// all paths at that time.
#[allow(clippy::too_many_arguments)]
pub fn sample_states_at(
    model: &SphsModel,
    control: &dyn ControlLaw,
    x0: &DVector<f64>,
    times: &[f64],
    config: &IntegratorConfig,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<Vec<DVector<f64>>>> {
    let horizon = times.iter().copied().fold(0.0, f64::max);
    let steps: Vec<usize> = times
        .iter()
        .map(|t| crate::integrate::step_count(*t, config.h))
        .collect::<Result<_>>()?;
    let per_path = simulate_map(
        model,
        control,
        &|_| x0.clone(),
        horizon,
        config,
        n_paths,
        seed,
        |_| StateSnapshots::new(steps.clone()),
        |_, obs, _| obs,
    )?;
    let mut order: Vec<usize> = (0..steps.len()).collect();
    order.sort_by_key(|&i| steps[i]);
    let mut out = vec![Vec::with_capacity(n_paths); times.len()];
    for snap in per_path {
        for (rank, &slot) in order.iter().enumerate() {
            out[slot].push(snap.states[rank].clone());
        }
    }
    Ok(out)
}

/// Component-wise comparison of an empirical covariance with a Gaussian law,
/// in the principal axes of the law's covariance on the stable subspace.
///
/// Entry `(i, j)` is `|Mᵢⱼ − Λᵢⱼ| / √(λᵢλⱼ)` with `M = Wᵀ Σ̂ W`, `Λ` the
/// eigenvalues and `W` the eigenvectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceComparison {
    pub eigenvalues: DVector<f64>,
    pub empirical: DMatrix<f64>,
    pub relative_error: DMatrix<f64>,
    pub max_relative_error: f64,
}

pub fn compare_covariance(law: &GaussianLaw, empirical: &DMatrix<f64>) -> CovarianceComparison {
    let v = &law.stable_basis;
    let reduced = law.reduced_covariance();
    let eig = reduced.symmetric_eigen();
    // sort axes by decreasing variance for a stable report
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let w = v * columns(&eig.eigenvectors, &order);
    let lambda = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let m = w.tr_mul(empirical) * &w;
    let d = lambda.len();
    let rel = DMatrix::from_fn(d, d, |i, j| {
        let target = if i == j { lambda[i] } else { 0.0 };
        (m[(i, j)] - target).abs() / (lambda[i] * lambda[j]).abs().sqrt()
    });
    let max = rel.iter().copied().fold(0.0, f64::max);
    CovarianceComparison {
        eigenvalues: lambda,
        empirical: m,
        relative_error: rel,
        max_relative_error: max,
    }
}
