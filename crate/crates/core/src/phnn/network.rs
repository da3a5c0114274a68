//! The four compared model families and the prediction map.
//!
//! For a system with `d` degrees of freedom and state `(q, p)`:
//!
//! * `bNN`:   `(q, p, t) ↦ (q̇, ṗ)` directly,
//! * `HNN`:   `Ĥ(q, p)`, prediction `(∂Ĥ/∂p, −∂Ĥ/∂q)`,
//! * `TDHNN`: as HNN with `Ĥ(q, p, t)`,
//! * `pHNN`:  `q̇ = ∂Ĥ/∂p`, `ṗ = −∂Ĥ/∂q + N̂(q, p)·∂Ĥ/∂p + F̂(t)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, MlpVars};
use super::tape::{Tape, Var};
use crate::{Error, Result};

/// `(∂Ĥ/∂p, −∂Ĥ/∂q)` from `∂Ĥ = (∂Ĥ/∂q, ∂Ĥ/∂p)`.
pub fn symplectic_map(grad: &DVector<f64>) -> DVector<f64> {
    let d = grad.len() / 2;
    DVector::from_fn(2 * d, |i, _| if i < d { grad[d + i] } else { -grad[i - d] })
}

/// `(∂Ĥ/∂p, −∂Ĥ/∂q + N̂·∂Ĥ/∂p + F̂)`.
pub fn port_hamiltonian_map(grad: &DVector<f64>, damping: f64, force: &DVector<f64>) -> DVector<f64> {
    let d = grad.len() / 2;
    let mut out = symplectic_map(grad);
    for i in 0..d {
        out[d + i] += damping * grad[d + i] + force[i];
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NetworkKind {
    #[serde(rename = "bNN")]
    Bnn,
    #[serde(rename = "HNN")]
    Hnn,
    #[serde(rename = "TDHNN")]
    Tdhnn,
    #[serde(rename = "pHNN")]
    Phnn,
}

impl NetworkKind {
    pub const ALL: [NetworkKind; 4] = [NetworkKind::Bnn, NetworkKind::Hnn, NetworkKind::Tdhnn, NetworkKind::Phnn];

    pub fn name(self) -> &'static str {
        match self {
            NetworkKind::Bnn => "bNN",
            NetworkKind::Hnn => "HNN",
            NetworkKind::Tdhnn => "TDHNN",
            NetworkKind::Phnn => "pHNN",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config("kind", format!("unknown network kind `{s}`")))
    }

    pub fn has_energy(self) -> bool {
        self != NetworkKind::Bnn
    }
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}
fn default_port_hidden() -> Vec<usize> {
    vec![32, 32]
}

/// Hidden-layer widths of the main network and of the pHNN port networks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_port_hidden")]
    pub port_hidden: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            port_hidden: default_port_hidden(),
        }
    }
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend_from_slice(hidden);
    w.push(output);
    w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkModel {
    pub kind: NetworkKind,
    /// Degrees of freedom `d` (state dimension `2d`).
    pub dof: usize,
    /// bNN: the direct map; otherwise `Ĥ`.
    pub main: Mlp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub force: Option<Mlp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damping: Option<Mlp>,
}

/// Tape handles of all components.
pub(crate) struct NetworkVars {
    main: MlpVars,
    force: Option<MlpVars>,
    damping: Option<MlpVars>,
}

/// Batch prediction recorded on a tape.
pub(crate) struct BatchPrediction {
    /// `batch × 2d`, columns `(q̇, ṗ)`.
    pub derivative: Var,
    pub force: Option<Var>,
    pub damping: Option<Var>,
}

impl NetworkModel {
    pub fn new<R: Rng + ?Sized>(kind: NetworkKind, dof: usize, arch: &Architecture, rng: &mut R) -> Self {
        let d2 = 2 * dof;
        let main = match kind {
            NetworkKind::Bnn => Mlp::glorot(&widths(d2 + 1, &arch.hidden, d2), rng),
            NetworkKind::Hnn | NetworkKind::Phnn => Mlp::glorot(&widths(d2, &arch.hidden, 1), rng),
            NetworkKind::Tdhnn => Mlp::glorot(&widths(d2 + 1, &arch.hidden, 1), rng),
        };
        let (force, damping) = if kind == NetworkKind::Phnn {
            (
                Some(Mlp::glorot(&widths(1, &arch.port_hidden, dof), rng)),
                Some(Mlp::glorot(&widths(d2, &arch.port_hidden, 1), rng)),
            )
        } else {
            (None, None)
        };
        Self {
            kind,
            dof,
            main,
            force,
            damping,
        }
    }

    /// Assemble a model from given components, checking their shapes.
    pub fn from_parts(kind: NetworkKind, dof: usize, main: Mlp, force: Option<Mlp>, damping: Option<Mlp>) -> Result<Self> {
        let model = Self {
            kind,
            dof,
            main,
            force,
            damping,
        };
        model.check()?;
        Ok(model)
    }

    pub fn check(&self) -> Result<()> {
        let d2 = 2 * self.dof;
        let (input, output) = match self.kind {
            NetworkKind::Bnn => (d2 + 1, d2),
            NetworkKind::Hnn | NetworkKind::Phnn => (d2, 1),
            NetworkKind::Tdhnn => (d2 + 1, 1),
        };
        if self.main.input_dim() != input || self.main.output_dim() != output {
            return Err(Error::config("main", format!("{} network must map {input} → {output}", self.kind.name())));
        }
        let ports = self.force.is_some() || self.damping.is_some();
        match (&self.force, &self.damping) {
            (Some(f), Some(n)) if self.kind == NetworkKind::Phnn => {
                if f.input_dim() != 1 || f.output_dim() != self.dof {
                    return Err(Error::config("force", format!("force network must map 1 → {}", self.dof)));
                }
                if n.input_dim() != d2 || n.output_dim() != 1 {
                    return Err(Error::config("damping", format!("damping network must map {d2} → 1")));
                }
                Ok(())
            }
            _ if self.kind == NetworkKind::Phnn => Err(Error::config("force", "pHNN needs force and damping networks")),
            _ if ports => Err(Error::config("force", "only pHNN carries port networks")),
            _ => Ok(()),
        }
    }

    pub fn components(&self) -> Vec<&Mlp> {
        let mut c = vec![&self.main];
        c.extend(self.force.iter());
        c.extend(self.damping.iter());
        c
    }

    pub fn n_params(&self) -> usize {
        self.components().iter().map(|m| m.n_params()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        self.components().iter().flat_map(|m| m.params()).collect()
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params(), "parameter count mismatch");
        let mut at = 0;
        let mut take = |m: &mut Mlp| {
            let n = m.n_params();
            m.set_params(&flat[at..at + n]);
            at += n;
        };
        take(&mut self.main);
        if let Some(f) = self.force.as_mut() {
            take(f);
        }
        if let Some(n) = self.damping.as_mut() {
            take(n);
        }
    }

    fn energy_input(&self, x: &[f64], t: f64) -> Vec<f64> {
        let mut input = x.to_vec();
        if self.kind == NetworkKind::Tdhnn {
            input.push(t);
        }
        input
    }

    /// Learned energy `Ĥ(x)` (at time `t` for TDHNN); `None` for bNN.
    pub fn energy(&self, x: &[f64], t: f64) -> Option<f64> {
        self.kind
            .has_energy()
            .then(|| self.main.eval(&self.energy_input(x, t)).map(|v| v[0]).ok())
            .flatten()
    }

    /// Learned force `F̂(t)` (pHNN only).
    pub fn force_at(&self, t: f64) -> Option<DVector<f64>> {
        self.force.as_ref().and_then(|f| f.eval(&[t]).ok())
    }

    /// Learned damping coefficient `N̂(q, p)` (pHNN only).
    pub fn damping_at(&self, x: &[f64]) -> Option<f64> {
        self.damping.as_ref().and_then(|n| n.eval(x).ok()).map(|v| v[0])
    }

    /// Predicted `(q̇, ṗ)` at state `x = (q, p)` and time `t`.
    pub fn predict(&self, x: &[f64], t: f64) -> Result<DVector<f64>> {
        let d = self.dof;
        if x.len() != 2 * d {
            return Err(Error::config("state", format!("expected {} state components", 2 * d)));
        }
        if self.kind == NetworkKind::Bnn {
            let mut input = x.to_vec();
            input.push(t);
            return self.main.eval(&input);
        }
        let (_, full) = self.main.value_and_gradient(&self.energy_input(x, t))?;
        let grad = full.rows(0, 2 * d).into_owned();
        Ok(match self.kind {
            NetworkKind::Phnn => {
                let n = self.damping_at(x).expect("checked");
                let f = self.force_at(t).expect("checked");
                port_hamiltonian_map(&grad, n, &f)
            }
            _ => symplectic_map(&grad),
        })
    }

    pub(crate) fn register(&self, tape: &mut Tape) -> NetworkVars {
        NetworkVars {
            main: self.main.register(tape),
            force: self.force.as_ref().map(|f| f.register(tape)),
            damping: self.damping.as_ref().map(|n| n.register(tape)),
        }
    }

    /// Record the batch prediction for states `x` (`batch × 2d`) and times
    /// `t` (`batch × 1`).
    pub(crate) fn predict_batch(&self, tape: &mut Tape, vars: &NetworkVars, x: Var, t: Var) -> BatchPrediction {
        let d = self.dof;
        let input = match self.kind {
            NetworkKind::Bnn | NetworkKind::Tdhnn => tape.hcat(x, t),
            NetworkKind::Hnn | NetworkKind::Phnn => x,
        };
        let fwd = self.main.forward(tape, &vars.main, input);
        if self.kind == NetworkKind::Bnn {
            return BatchPrediction {
                derivative: fwd.output,
                force: None,
                damping: None,
            };
        }
        let grad = self.main.input_gradient(tape, &vars.main, &fwd);
        let gq = tape.columns(grad, 0, d);
        let gp = tape.columns(grad, d, d);
        let mut dp = tape.scale(gq, -1.0);
        let (mut force, mut damping) = (None, None);
        if self.kind == NetworkKind::Phnn {
            let n_net = self.damping.as_ref().expect("checked");
            let n = n_net.forward(tape, vars.damping.as_ref().expect("registered"), x).output;
            let n_wide = if d == 1 {
                n
            } else {
                let ones = tape.leaf(DMatrix::from_element(1, d, 1.0));
                tape.matmul(n, ones)
            };
            let ngp = tape.mul(n_wide, gp);
            dp = tape.add(dp, ngp);
            let f_net = self.force.as_ref().expect("checked");
            let f = f_net.forward(tape, vars.force.as_ref().expect("registered"), t).output;
            dp = tape.add(dp, f);
            force = Some(f);
            damping = Some(n);
        }
        BatchPrediction {
            derivative: tape.hcat(gp, dp),
            force,
            damping,
        }
    }

    pub(crate) fn gather_gradient(&self, vars: &NetworkVars, adj: &[Option<DMatrix<f64>>]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        self.main.gather_gradient(&vars.main, adj, &mut out);
        if let (Some(f), Some(v)) = (&self.force, &vars.force) {
            f.gather_gradient(v, adj, &mut out);
        }
        if let (Some(n), Some(v)) = (&self.damping, &vars.damping) {
            n.gather_gradient(v, adj, &mut out);
        }
        out
    }
}
