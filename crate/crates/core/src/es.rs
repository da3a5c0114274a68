//! Self-adaptive (μ,λ) and (μ+λ) evolution strategies, and the stochastic
//! controller-tuning problem they are applied to.

use std::io::Write;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::integrate::{fmt_f64, path_rng, simulate_map, IntegratorConfig, PathObserver, StepView};
use crate::model::{LinearFeedback, SphsModel};
use crate::{Error, Result};

/// Fitness assigned to closed loops that blow up.
pub const PENALTY: f64 = 1e9;
/// Lower bound for step sizes after mutation.
pub const SIGMA_FLOOR: f64 = 1e-12;

/// Learning rate of the per-coordinate factor, `1/√(2n)`.
pub fn tau(n: usize) -> f64 {
    1.0 / (2.0 * n as f64).sqrt()
}

/// Learning rate of the second step-size term, `1/√(2√n)`.
pub fn tau_prime(n: usize) -> f64 {
    1.0 / (2.0 * (n as f64).sqrt()).sqrt()
}

/// A search point `π` with its own step sizes `σ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub pi: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl Individual {
    pub fn new(pi: Vec<f64>, sigma: f64) -> Self {
        let sigma = vec![sigma; pi.len()];
        Self { pi, sigma }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    #[default]
    Comma,
    Plus,
}

/// How step sizes are adapted.
///
/// `Additive` is `σ' = σ·exp(τN) + τ'N'` per coordinate, with `π' = π + σN''`
/// using the parent's `σ`. `LogNormal` is `σ' = σ·exp(τ'N₀ + τNᵢ)` with one
/// shared draw `N₀`, and the offspring moves with its own `σ'`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaRule {
    Additive,
    #[default]
    LogNormal,
}

fn default_mu() -> usize {
    5
}
fn default_lambda() -> usize {
    35
}
fn default_generations() -> usize {
    300
}
fn default_sigma() -> f64 {
    0.5
}
fn default_range() -> [f64; 2] {
    [-1.0, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EsConfig {
    #[serde(default = "default_mu")]
    pub mu: usize,
    #[serde(default = "default_lambda")]
    pub lambda: usize,
    #[serde(default = "default_generations")]
    pub generations: usize,
    #[serde(default)]
    pub selection: Selection,
    #[serde(default)]
    pub sigma_rule: SigmaRule,
    #[serde(default = "default_sigma")]
    pub initial_sigma: f64,
    /// Parents start uniformly in this box unless `start` is given.
    #[serde(default = "default_range")]
    pub init_range: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for EsConfig {
    fn default() -> Self {
        Self {
            mu: default_mu(),
            lambda: default_lambda(),
            generations: default_generations(),
            selection: Selection::default(),
            sigma_rule: SigmaRule::default(),
            initial_sigma: default_sigma(),
            init_range: default_range(),
            start: None,
            seed: 0,
        }
    }
}

impl EsConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::config("n_params", "at least one parameter is required"));
        }
        if self.mu == 0 || self.lambda < self.mu {
            return Err(Error::config("lambda", "need lambda >= mu >= 1"));
        }
        if !(self.initial_sigma.is_finite() && self.initial_sigma > 0.0) {
            return Err(Error::config("initial_sigma", "must be positive"));
        }
        let [lo, hi] = self.init_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::config("init_range", "must be a finite interval"));
        }
        if let Some(s) = &self.start {
            if s.len() != n || s.iter().any(|v| !v.is_finite()) {
                return Err(Error::config("start", format!("expected {n} finite values")));
            }
        }
        Ok(())
    }
}

/// Mutation driven by an arbitrary source of standard normal draws.
pub fn mutate_with(
    ind: &Individual,
    tau: f64,
    tau_prime: f64,
    rule: SigmaRule,
    normal: &mut dyn FnMut() -> f64,
) -> Individual {
    let n = ind.pi.len();
    let mut pi = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    match rule {
        SigmaRule::Additive => {
            for i in 0..n {
                pi.push(ind.pi[i] + ind.sigma[i] * normal());
                let s = ind.sigma[i] * (tau * normal()).exp() + tau_prime * normal();
                sigma.push(s.max(SIGMA_FLOOR));
            }
        }
        SigmaRule::LogNormal => {
            let shared = tau_prime * normal();
            for i in 0..n {
                let s = (ind.sigma[i] * (shared + tau * normal()).exp()).max(SIGMA_FLOOR);
                sigma.push(s);
                pi.push(ind.pi[i] + s * normal());
            }
        }
    }
    Individual { pi, sigma }
}

/// Mutate with the learning rates implied by the dimension.
pub fn mutate<R: Rng + ?Sized>(ind: &Individual, rule: SigmaRule, rng: &mut R) -> Individual {
    let n = ind.pi.len();
    mutate_with(ind, tau(n), tau_prime(n), rule, &mut || rng.sample(StandardNormal))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    /// Best and median over this generation's valid offspring (the initial
    /// parents for generation 0).
    pub best: f64,
    pub median: f64,
    pub best_so_far: f64,
    pub mean_sigma: f64,
    pub discarded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsRun {
    pub config: EsConfig,
    pub n_params: usize,
    pub best: Individual,
    pub best_fitness: f64,
    pub history: Vec<GenerationStats>,
    pub discarded: usize,
}

impl EsRun {
    pub fn write_history_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "generation,best,median,best_so_far,mean_sigma,discarded")?;
        for g in &self.history {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                g.generation,
                fmt_f64(g.best),
                fmt_f64(g.median),
                fmt_f64(g.best_so_far),
                fmt_f64(g.mean_sigma),
                g.discarded
            )?;
        }
        Ok(())
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn stats(generation: usize, pool: &[(f64, Individual)], best_so_far: f64, discarded: usize) -> GenerationStats {
    let mut f: Vec<f64> = pool.iter().map(|(v, _)| *v).collect();
    f.sort_by(f64::total_cmp);
    let sigmas: Vec<f64> = pool.iter().flat_map(|(_, i)| i.sigma.iter().copied()).collect();
    GenerationStats {
        generation,
        best: f.first().copied().unwrap_or(f64::NAN),
        median: median(&f),
        best_so_far,
        mean_sigma: sigmas.iter().sum::<f64>() / sigmas.len().max(1) as f64,
        discarded,
    }
}

/// Minimize `fitness` over `n` parameters.
///
/// Stream 0 of the seed places the initial parents; offspring `j` of
/// generation `g` draws its parent and mutation from stream `1 + g·λ + j`,
/// so results do not depend on how evaluations are scheduled. Candidates
/// with NaN fitness are discarded and counted.
pub fn es_optimize(fitness: &(dyn Fn(&[f64]) -> f64 + Sync), n: usize, config: &EsConfig) -> Result<EsRun> {
    config.validate(n)?;
    let mut init = path_rng(config.seed, 0);
    let parents: Vec<Individual> = (0..config.mu)
        .map(|_| match &config.start {
            Some(s) => Individual::new(s.clone(), config.initial_sigma),
            None => {
                let [lo, hi] = config.init_range;
                let pi = (0..n).map(|_| if hi > lo { init.random_range(lo..hi) } else { lo }).collect();
                Individual::new(pi, config.initial_sigma)
            }
        })
        .collect();
    let mut parents: Vec<(f64, Individual)> = parents.into_iter().map(|p| (fitness(&p.pi), p)).collect();
    if parents.iter().any(|(f, _)| f.is_nan()) {
        return Err(Error::config("fitness", "fitness is NaN at an initial parent"));
    }
    parents.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = parents[0].clone();
    let mut history = vec![stats(0, &parents, best.0, 0)];
    let mut discarded_total = 0;

    for g in 0..config.generations {
        let offspring: Vec<(f64, Individual)> = (0..config.lambda)
            .into_par_iter()
            .map(|j| {
                let mut rng = path_rng(config.seed, 1 + (g * config.lambda + j) as u64);
                let parent = &parents[rng.random_range(0..parents.len())].1;
                let child = mutate(parent, config.sigma_rule, &mut rng);
                (fitness(&child.pi), child)
            })
            .collect();
        let total = offspring.len();
        let valid: Vec<(f64, Individual)> = offspring.into_iter().filter(|(f, _)| !f.is_nan()).collect();
        let discarded = total - valid.len();
        if discarded > 0 {
            warn!("generation {}: discarded {discarded} candidates with NaN fitness", g + 1);
        }
        discarded_total += discarded;
        if let Some(b) = valid.iter().min_by(|a, b| a.0.total_cmp(&b.0)) {
            if b.0 < best.0 {
                best = b.clone();
            }
        }
        let generation_stats = stats(g + 1, &valid, best.0, discarded);
        let mut pool = match config.selection {
            Selection::Comma => valid,
            Selection::Plus => {
                let mut p = parents.clone();
                p.extend(valid);
                p
            }
        };
        pool.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pool.len() < config.mu {
            // too few valid offspring: top up with the previous parents
            pool.extend(parents.iter().take(config.mu - pool.len()).cloned());
        }
        pool.truncate(config.mu);
        parents = pool;
        history.push(generation_stats);
    }
    Ok(EsRun {
        config: config.clone(),
        n_params: n,
        best: best.1,
        best_fitness: best.0,
        history,
        discarded: discarded_total,
    })
}

/// `‖π‖²`.
pub fn sphere(pi: &[f64]) -> f64 {
    pi.iter().map(|v| v * v).sum()
}

/// Layout of the gains in `π`: `K` (`m×n`, row-major) followed, when
/// `noise_compensation` is set, by `M` (`m×k`, row-major) in
/// `u = −Kx + Mz`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControllerSpec {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub noise_compensation: bool,
}

impl ControllerSpec {
    pub fn for_model(model: &SphsModel, noise_compensation: bool) -> Self {
        Self {
            n: model.n,
            m: model.m,
            k: model.k,
            noise_compensation,
        }
    }

    pub fn n_params(&self) -> usize {
        self.m * self.n + if self.noise_compensation { self.m * self.k } else { 0 }
    }

    pub fn gains(&self, pi: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if pi.len() != self.n_params() {
            return Err(Error::config("gains", format!("expected {} values", self.n_params())));
        }
        let kn = self.m * self.n;
        let k = DMatrix::from_row_slice(self.m, self.n, &pi[..kn]);
        let mz = if self.noise_compensation {
            DMatrix::from_row_slice(self.m, self.k, &pi[kn..])
        } else {
            DMatrix::zeros(self.m, self.k)
        };
        Ok((k, mz))
    }

    pub fn law(&self, model: &SphsModel, pi: &[f64]) -> Result<LinearFeedback> {
        let (k, mz) = self.gains(pi)?;
        LinearFeedback::new(model, k, mz)
    }
}

fn default_paths() -> usize {
    64
}
fn default_fitness_horizon() -> f64 {
    5.0
}
fn default_weight() -> f64 {
    1.0
}

/// Monte-Carlo cost `E[∫₀ᵀ (q xᵀx + r uᵀu) dt + H(x_T)]` on a fixed ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitnessConfig {
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default = "default_fitness_horizon")]
    pub horizon: f64,
    pub integrator: IntegratorConfig,
    pub x0: Vec<f64>,
    #[serde(default = "default_weight")]
    pub state_weight: f64,
    #[serde(default = "default_weight")]
    pub control_weight: f64,
    /// Ensemble seed shared by every candidate.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub state_cost: f64,
    pub control_cost: f64,
    pub terminal_energy: f64,
    pub total: f64,
}

#[derive(Default)]
struct RunningCost {
    state: f64,
    control: f64,
}

impl PathObserver for RunningCost {
    fn step(&mut self, v: &StepView<'_>) -> Result<()> {
        self.state += v.h * v.state.norm_squared();
        self.control += v.h * v.control.norm_squared();
        Ok(())
    }
}

/// Expected cost of the closed loop under gains `pi`, split into its parts
/// (weights applied).
pub fn controller_cost(
    pi: &[f64],
    plant: &SphsModel,
    spec: &ControllerSpec,
    cfg: &FitnessConfig,
) -> Result<CostBreakdown> {
    if (spec.n, spec.m, spec.k) != (plant.n, plant.m, plant.k) {
        return Err(Error::config("controller", "controller and plant dimensions differ"));
    }
    if cfg.x0.len() != plant.n {
        return Err(Error::config("x0", format!("expected {} values", plant.n)));
    }
    let law = spec.law(plant, pi)?;
    let x0 = DVector::from_vec(cfg.x0.clone());
    let parts = simulate_map(
        plant,
        &law,
        &|_| x0.clone(),
        cfg.horizon,
        &cfg.integrator,
        cfg.n_paths,
        cfg.seed,
        |_| RunningCost::default(),
        |_, c, x| (c.state, c.control, plant.hamiltonian(&x)),
    )?;
    let n = parts.len() as f64;
    let (mut s, mut c, mut e) = (0.0, 0.0, 0.0);
    for (a, b, h) in parts {
        s += a;
        c += b;
        e += h;
    }
    let (s, c, e) = (cfg.state_weight * s / n, cfg.control_weight * c / n, e / n);
    Ok(CostBreakdown {
        state_cost: s,
        control_cost: c,
        terminal_energy: e,
        total: s + c + e,
    })
}

/// Fitness of gains `pi`; failed or diverging closed loops score
/// [`PENALTY`]. Dimension errors are still reported.
pub fn controller_fitness(pi: &[f64], plant: &SphsModel, spec: &ControllerSpec, cfg: &FitnessConfig) -> Result<f64> {
    spec.gains(pi)?;
    match controller_cost(pi, plant, spec, cfg) {
        Ok(b) if b.total.is_finite() && b.total < PENALTY => Ok(b.total),
        Ok(_) | Err(Error::Numeric { .. }) | Err(Error::Integration { .. }) => Ok(PENALTY),
        Err(e) => Err(e),
    }
}
