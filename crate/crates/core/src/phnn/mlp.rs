//! Fully connected tanh networks with value, input-gradient and
//! parameter-gradient evaluators.
//!
//! Weights are stored input-major (`W: d_in × d_out`) so a batch `X` (rows =
//! samples) maps as `tanh(X W + b)`. The last layer is linear.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use crate::numeric::{matrix_from_rows, matrix_to_rows};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpFile", into = "MlpFile")]
pub struct Mlp {
    widths: Vec<usize>,
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DMatrix<f64>>,
}

/// On-disk layout: per layer a row-major `d_in × d_out` weight array.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MlpFile {
    widths: Vec<usize>,
    layers: Vec<LayerFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl From<Mlp> for MlpFile {
    fn from(m: Mlp) -> Self {
        MlpFile {
            layers: m
                .weights
                .iter()
                .zip(&m.biases)
                .map(|(w, b)| LayerFile {
                    weights: matrix_to_rows(w),
                    bias: b.iter().copied().collect(),
                })
                .collect(),
            widths: m.widths,
        }
    }
}

impl TryFrom<MlpFile> for Mlp {
    type Error = Error;

    fn try_from(f: MlpFile) -> Result<Self> {
        if f.widths.len() < 2 || f.layers.len() != f.widths.len() - 1 {
            return Err(Error::config("layers", "layer count does not match widths"));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (l, layer) in f.layers.iter().enumerate() {
            let w = matrix_from_rows(&layer.weights, "weights")?;
            if w.shape() != (f.widths[l], f.widths[l + 1]) || layer.bias.len() != f.widths[l + 1] {
                return Err(Error::config("weights", format!("layer {l} has the wrong shape")));
            }
            weights.push(w);
            biases.push(DMatrix::from_row_slice(1, layer.bias.len(), &layer.bias));
        }
        Ok(Mlp {
            widths: f.widths,
            weights,
            biases,
        })
    }
}

/// Tape handles of a network's parameters.
#[derive(Debug, Clone)]
pub struct MlpVars {
    weights: Vec<Var>,
    biases: Vec<Var>,
}

/// Tape nodes of a forward pass.
#[derive(Debug, Clone)]
pub struct MlpForward {
    pub output: Var,
    hidden: Vec<Var>,
}

impl Mlp {
    /// All-zero network.
    pub fn zeros(widths: &[usize]) -> Self {
        assert!(widths.len() >= 2, "a network needs input and output widths");
        Self {
            widths: widths.to_vec(),
            weights: widths.windows(2).map(|w| DMatrix::zeros(w[0], w[1])).collect(),
            biases: widths[1..].iter().map(|&w| DMatrix::zeros(1, w)).collect(),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(widths);
        for w in &mut net.weights {
            let bound = (6.0 / (w.nrows() + w.ncols()) as f64).sqrt();
            for v in w.iter_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
        net
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("non-empty")
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().zip(&self.biases).map(|(w, b)| w.len() + b.len()).sum()
    }

    /// Parameters flattened layer by layer (weights column-major, then bias).
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b.as_slice());
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params(), "parameter count mismatch");
        let mut at = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            let (nw, nb) = (w.len(), b.len());
            w.as_mut_slice().copy_from_slice(&flat[at..at + nw]);
            at += nw;
            b.as_mut_slice().copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
    }

    pub fn layer_mut(&mut self, l: usize) -> (&mut DMatrix<f64>, &mut DMatrix<f64>) {
        (&mut self.weights[l], &mut self.biases[l])
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.input_dim() {
            return Err(Error::config("input", format!("expected {} inputs, got {len}", self.input_dim())));
        }
        Ok(())
    }

    /// Activations of every layer for one input (the last one is the output).
    fn activations(&self, x: &[f64]) -> Vec<DVector<f64>> {
        let mut acts = Vec::with_capacity(self.weights.len());
        let mut a = DVector::from_column_slice(x);
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w.tr_mul(&a);
            z += b.transpose();
            if l < last {
                z.apply(|v| *v = v.tanh());
            }
            acts.push(z.clone());
            a = z;
        }
        acts
    }

    pub fn eval(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check_input(x.len())?;
        Ok(self.activations(x).pop().expect("at least one layer"))
    }

    /// Jacobian `∂out/∂x` (`d_out × d_in`).
    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_input(x.len())?;
        let acts = self.activations(x);
        let last = self.weights.len() - 1;
        // forward-mode product of layer Jacobians, d_in columns
        let mut jac = DMatrix::identity(self.input_dim(), self.input_dim());
        for (l, w) in self.weights.iter().enumerate() {
            let mut next = w.tr_mul(&jac);
            if l < last {
                for (i, mut row) in next.row_iter_mut().enumerate() {
                    row *= 1.0 - acts[l][i] * acts[l][i];
                }
            }
            jac = next;
        }
        Ok(jac)
    }

    /// Value and input gradient of a scalar-output network.
    pub fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, DVector<f64>)> {
        self.check_input(x.len())?;
        if self.output_dim() != 1 {
            return Err(Error::config("output", "value_and_gradient needs a scalar network"));
        }
        let acts = self.activations(x);
        let last = self.weights.len() - 1;
        let mut delta = DVector::from_element(1, 1.0);
        for l in (0..=last).rev() {
            if l < last {
                for (d, a) in delta.iter_mut().zip(acts[l].iter()) {
                    *d *= 1.0 - a * a;
                }
            }
            delta = &self.weights[l] * delta;
        }
        Ok((acts[last][0], delta))
    }

    pub fn register(&self, tape: &mut Tape) -> MlpVars {
        MlpVars {
            weights: self.weights.iter().map(|w| tape.leaf(w.clone())).collect(),
            biases: self.biases.iter().map(|b| tape.leaf(b.clone())).collect(),
        }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &MlpVars, x: Var) -> MlpForward {
        let last = self.weights.len() - 1;
        let mut a = x;
        let mut hidden = Vec::new();
        for l in 0..=last {
            let z = tape.matmul(a, vars.weights[l]);
            let z = tape.add_row(z, vars.biases[l]);
            a = if l < last {
                let h = tape.tanh(z);
                hidden.push(h);
                h
            } else {
                z
            };
        }
        MlpForward { output: a, hidden }
    }

    /// `∂out/∂x` of a scalar network for every row of the batch, recorded on
    /// the tape (`batch × d_in`).
    pub fn input_gradient(&self, tape: &mut Tape, vars: &MlpVars, fwd: &MlpForward) -> Var {
        let batch = tape.value(fwd.output).nrows();
        let ones = tape.leaf(DMatrix::from_element(batch, 1, 1.0));
        let last = self.weights.len() - 1;
        let mut delta = tape.matmul_t(ones, vars.weights[last]);
        for l in (0..last).rev() {
            let d = tape.one_minus_sq(fwd.hidden[l]);
            let dz = tape.mul(delta, d);
            delta = tape.matmul_t(dz, vars.weights[l]);
        }
        delta
    }

    /// Flatten the adjoints of this network's parameters in [`Mlp::params`]
    /// order.
    pub fn gather_gradient(&self, vars: &MlpVars, adj: &[Option<DMatrix<f64>>], out: &mut Vec<f64>) {
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            for (var, len) in [(vars.weights[l], w.len()), (vars.biases[l], b.len())] {
                match &adj[var.index()] {
                    Some(g) if g.len() == len => out.extend_from_slice(g.as_slice()),
                    _ => out.extend(std::iter::repeat_n(0.0, len)),
                }
            }
        }
    }

    /// Gradient of `Σ seed ⊙ f(X)` with respect to the parameters.
    pub fn param_gradient(&self, x: &DMatrix<f64>, seed: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.check_input(x.ncols())?;
        if seed.shape() != (x.nrows(), self.output_dim()) {
            return Err(Error::config("seed", "seed must match the output batch shape"));
        }
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let xv = tape.leaf(x.clone());
        let fwd = self.forward(&mut tape, &vars, xv);
        let s = tape.leaf(seed.clone());
        let prod = tape.mul(fwd.output, s);
        let ones = tape.leaf(DMatrix::from_element(self.output_dim(), 1, 1.0));
        let rows = tape.matmul(prod, ones);
        let ones_b = tape.leaf(DMatrix::from_element(1, x.nrows(), 1.0));
        let total = tape.matmul(ones_b, rows);
        let adj = tape.backward(total);
        let mut out = Vec::with_capacity(self.n_params());
        self.gather_gradient(&vars, &adj, &mut out);
        Ok(out)
    }
}
