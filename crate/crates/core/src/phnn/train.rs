//! Loss and Adam training.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Record, Split};
use super::network::{Architecture, NetworkKind, NetworkModel};
use super::tape::Tape;
use crate::integrate::path_rng;
use crate::{Error, Result};

fn default_epochs() -> usize {
    2000
}
fn default_batch() -> usize {
    128
}
fn default_lr() -> f64 {
    1e-3
}
fn default_lambda() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_lambda")]
    pub lambda_f: f64,
    #[serde(default = "default_lambda")]
    pub lambda_n: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub architecture: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            batch_size: default_batch(),
            learning_rate: default_lr(),
            lambda_f: default_lambda(),
            lambda_n: default_lambda(),
            seed: 0,
            architecture: Architecture::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if !(self.lambda_f >= 0.0 && self.lambda_n >= 0.0) {
            return Err(Error::config("lambda_f", "regularization weights must be non-negative"));
        }
        if self.architecture.hidden.is_empty() || self.architecture.port_hidden.is_empty() {
            return Err(Error::config("architecture", "at least one hidden layer is required"));
        }
        Ok(())
    }
}

/// Batch loss: mean squared derivative error plus `λ_F·mean‖F̂‖₁ + λ_N·mean|N̂|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub fit: f64,
    pub force_l1: f64,
    pub damping_l1: f64,
}

fn batch_matrices(batch: &[&Record], dof: usize) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let b = batch.len();
    let x = DMatrix::from_fn(b, 2 * dof, |r, c| batch[r].state[c]);
    let t = DMatrix::from_fn(b, 1, |r, _| batch[r].t);
    let y = DMatrix::from_fn(b, 2 * dof, |r, c| batch[r].derivative[c]);
    (x, t, y)
}

fn loss_impl(
    model: &NetworkModel,
    batch: &[&Record],
    lambda_f: f64,
    lambda_n: f64,
    with_gradient: bool,
) -> Result<(LossParts, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Contract("loss needs a non-empty batch".into()));
    }
    if let Some(r) = batch.iter().find(|r| r.state.len() != 2 * model.dof || r.derivative.len() != 2 * model.dof) {
        return Err(Error::config("dataset", format!("record of trajectory {} has the wrong dimension", r.trajectory)));
    }
    let inv_b = 1.0 / batch.len() as f64;
    let (x, t, y) = batch_matrices(batch, model.dof);
    let mut tape = Tape::new();
    let vars = model.register(&mut tape);
    let xv = tape.leaf(x);
    let tv = tape.leaf(t);
    let yv = tape.leaf(y);
    let pred = model.predict_batch(&mut tape, &vars, xv, tv);
    let res = tape.sub(pred.derivative, yv);
    let sq = tape.sum_squares(res);
    let mut total = tape.scale(sq, inv_b);
    let fit = tape.scalar(total);
    let (mut force_l1, mut damping_l1) = (0.0, 0.0);
    if let Some(f) = pred.force {
        let l1 = tape.sum_abs(f);
        force_l1 = tape.scalar(l1) * inv_b;
        let term = tape.scale(l1, lambda_f * inv_b);
        total = tape.add(total, term);
    }
    if let Some(n) = pred.damping {
        let l1 = tape.sum_abs(n);
        damping_l1 = tape.scalar(l1) * inv_b;
        let term = tape.scale(l1, lambda_n * inv_b);
        total = tape.add(total, term);
    }
    let parts = LossParts {
        total: tape.scalar(total),
        fit,
        force_l1,
        damping_l1,
    };
    let grad = if with_gradient {
        let adj = tape.backward(total);
        model.gather_gradient(&vars, &adj)
    } else {
        Vec::new()
    };
    Ok((parts, grad))
}

pub fn loss(model: &NetworkModel, batch: &[&Record], lambda_f: f64, lambda_n: f64) -> Result<LossParts> {
    loss_impl(model, batch, lambda_f, lambda_n, false).map(|r| r.0)
}

/// Loss and its gradient with respect to [`NetworkModel::params`].
pub fn loss_gradient(
    model: &NetworkModel,
    batch: &[&Record],
    lambda_f: f64,
    lambda_n: f64,
) -> Result<(LossParts, Vec<f64>)> {
    loss_impl(model, batch, lambda_f, lambda_n, true)
}

/// Adam with the usual bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub model: NetworkModel,
    /// Entry 0 is the full training loss before the first update; entry `e`
    /// is the sample-weighted mean batch loss of epoch `e`.
    pub history: Vec<f64>,
}

/// Train a freshly initialised network of `kind`.
pub fn train(kind: NetworkKind, dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let mut rng = path_rng(config.seed, 0);
    let model = NetworkModel::new(kind, dataset.dof, &config.architecture, &mut rng);
    train_from(model, dataset, config)
}

/// Continue training `model` on the training split.
pub fn train_from(mut model: NetworkModel, dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    model.check()?;
    let train_set = dataset.split(Split::Train);
    if train_set.is_empty() {
        return Err(Error::config("dataset", "training split is empty"));
    }
    let initial = loss(&model, &train_set, config.lambda_f, config.lambda_n)?.total;
    if !initial.is_finite() {
        return Err(Error::Training {
            epoch: 0,
            message: "initial loss is not finite".into(),
        });
    }
    let mut history = vec![initial];
    let mut params = model.params();
    let mut adam = Adam::new(params.len(), config.learning_rate);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffle_rng = path_rng(config.seed, 1);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Record> = chunk.iter().map(|&i| train_set[i]).collect();
            let (parts, grad) = loss_gradient(&model, &batch, config.lambda_f, config.lambda_n)?;
            if !parts.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training {
                    epoch,
                    message: "loss diverged".into(),
                });
            }
            sum += parts.total * batch.len() as f64;
            adam.update(&mut params, &grad);
            model.set_params(&params);
        }
        history.push(sum / train_set.len() as f64);
    }
    Ok(TrainOutcome { model, history })
}
