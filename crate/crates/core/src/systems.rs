//! Library of canonical systems and the JSON model definition format.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::agents::{build_ring_model, RingParams};
use crate::interconnect::{compose_many, CouplingEntry};
use crate::model::{
    symplectic, ControlLaw, MatrixField, QuadraticEnergy, QuarticEnergy, SphsModel,
};
use crate::numeric::{matrix_from_rows, matrix_to_rows};
use crate::{Error, Result};

/// Named real parameters of a canonical system.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Params(pub BTreeMap<String, f64>);

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.0.get(key).copied()
    }

    pub fn set(&mut self, key: &str, value: f64) -> &mut Self {
        self.0.insert(key.to_string(), value);
        self
    }

    fn or(&self, key: &str, default: f64) -> Result<f64> {
        let v = self.get(key).unwrap_or(default);
        if !v.is_finite() {
            return Err(Error::config(key, "parameter must be finite"));
        }
        Ok(v)
    }

    fn required(&self, kind: &str, key: &str) -> Result<f64> {
        let v = self
            .get(key)
            .ok_or_else(|| Error::config(key, format!("`{kind}` requires parameter `{key}`")))?;
        if !v.is_finite() {
            return Err(Error::config(key, "parameter must be finite"));
        }
        Ok(v)
    }

    fn only(&self, kind: &str, allowed: &[&str]) -> Result<()> {
        for key in self.0.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::config(
                    key.clone(),
                    format!("unknown parameter for `{kind}` (allowed: {})", allowed.join(", ")),
                ));
            }
        }
        Ok(())
    }
}

impl<const N: usize> From<[(&str, f64); N]> for Params {
    fn from(entries: [(&str, f64); N]) -> Self {
        Params(entries.iter().map(|(k, v)| (k.to_string(), *v)).collect())
    }
}

pub const CANONICAL_KINDS: &[&str] = &[
    "simple_spring",
    "damped_spring",
    "forced_spring",
    "forced_complex_spring",
    "duffing",
    "agent_ring",
    "stochastic_spring",
];

/// Periodic force `F₀ sin(ωt)` or `F₀ sin(ωt) sin(2ωt)` on a single port.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodicForce {
    pub amplitude: f64,
    pub omega: f64,
    pub complex: bool,
}

impl PeriodicForce {
    pub fn at(&self, t: f64) -> f64 {
        let base = self.amplitude * (self.omega * t).sin();
        if self.complex {
            base * (2.0 * self.omega * t).sin()
        } else {
            base
        }
    }

    pub fn period(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.omega
    }
}

impl ControlLaw for PeriodicForce {
    fn control(&self, t: f64, _x: &DVector<f64>, out: &mut DVector<f64>) {
        out[0] = self.at(t);
    }
}

/// Ground-truth port decomposition of a one-degree-of-freedom canonical
/// system, in the form `ṗ = −∂H/∂q + N ∂H/∂p + F(t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnownPorts {
    pub damping: f64,
    pub force: Option<PeriodicForce>,
}

impl KnownPorts {
    pub fn force_at(&self, t: f64) -> f64 {
        self.force.map_or(0.0, |f| f.at(t))
    }
}

fn spring_energy(params: &Params) -> Result<(f64, f64)> {
    let m = params.or("m", 1.0)?;
    let k = params.or("k", 1.0)?;
    if m <= 0.0 {
        return Err(Error::config("m", "mass must be positive"));
    }
    Ok((m, k))
}

fn one_dof(
    name: &str,
    energy: Arc<dyn crate::model::Hamiltonian>,
    delta: f64,
    sigma: Option<f64>,
) -> Result<SphsModel> {
    let r = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, delta]);
    let g = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let xi = match sigma {
        Some(s) => DMatrix::from_row_slice(2, 1, &[0.0, s]),
        None => DMatrix::zeros(2, 0),
    };
    SphsModel::new(
        name,
        MatrixField::Constant(symplectic(1)),
        MatrixField::Constant(r),
        MatrixField::Constant(g),
        MatrixField::Constant(xi),
        energy,
    )
}

/// Construct a canonical system by name.
///
/// Spring-type systems have state `(q, p)` and one force port `g = (0, 1)ᵀ`;
/// forced kinds carry their forcing as the default input of that port.
pub fn make_canonical_system(kind: &str, params: &Params) -> Result<SphsModel> {
    match kind {
        "simple_spring" => {
            params.only(kind, &["m", "k"])?;
            let (m, k) = spring_energy(params)?;
            one_dof(kind, Arc::new(QuadraticEnergy::diagonal(&[k, 1.0 / m])), 0.0, None)
        }
        "damped_spring" => {
            params.only(kind, &["m", "k", "delta"])?;
            let (m, k) = spring_energy(params)?;
            let delta = params.required(kind, "delta")?;
            one_dof(kind, Arc::new(QuadraticEnergy::diagonal(&[k, 1.0 / m])), delta, None)
        }
        "forced_spring" | "forced_complex_spring" => {
            params.only(kind, &["m", "k", "delta", "f0", "omega"])?;
            let (m, k) = spring_energy(params)?;
            let force = PeriodicForce {
                amplitude: params.required(kind, "f0")?,
                omega: params.required(kind, "omega")?,
                complex: kind == "forced_complex_spring",
            };
            let model = one_dof(
                kind,
                Arc::new(QuadraticEnergy::diagonal(&[k, 1.0 / m])),
                params.or("delta", 0.0)?,
                None,
            )?;
            Ok(model.with_default_input(Arc::new(force)))
        }
        "duffing" => {
            params.only(kind, &["m", "a", "b", "delta", "f0", "omega"])?;
            let m = params.or("m", 1.0)?;
            if m <= 0.0 {
                return Err(Error::config("m", "mass must be positive"));
            }
            let energy = QuarticEnergy {
                mass: m,
                linear: params.or("a", -1.0)?,
                cubic: params.or("b", 1.0)?,
            };
            let force = PeriodicForce {
                amplitude: params.or("f0", 0.5)?,
                omega: params.or("omega", 1.2)?,
                complex: false,
            };
            let model = one_dof(kind, Arc::new(energy), params.or("delta", 0.3)?, None)?;
            Ok(model.with_default_input(Arc::new(force)))
        }
        "stochastic_spring" => {
            params.only(kind, &["m", "k", "delta", "sigma"])?;
            let (m, k) = spring_energy(params)?;
            let sigma = params.required(kind, "sigma")?;
            one_dof(
                kind,
                Arc::new(QuadraticEnergy::diagonal(&[k, 1.0 / m])),
                params.or("delta", 0.0)?,
                Some(sigma),
            )
        }
        "agent_ring" => {
            params.only(kind, &["n_agents", "alpha", "beta", "sigma", "offset"])?;
            let n_agents = params.required(kind, "n_agents")?;
            let offset = params.or("offset", 1.0)?;
            if n_agents.fract() != 0.0 || offset.fract() != 0.0 {
                return Err(Error::config("n_agents", "agent count and offset must be integers"));
            }
            let ring = RingParams {
                n_agents: n_agents as usize,
                alpha: params.or("alpha", 1.0)?,
                beta: params.or("beta", 1.0)?,
                sigma: params.or("sigma", 0.0)?,
                interaction_offset: offset as i64,
            };
            Ok(build_ring_model(&ring)?.model)
        }
        other => Err(Error::config(
            "kind",
            format!("unknown system kind `{other}` (known: {})", CANONICAL_KINDS.join(", ")),
        )),
    }
}

/// Port decomposition of the one-degree-of-freedom canonical systems, used as
/// ground truth for learned force and damping terms.
pub fn known_ports(kind: &str, params: &Params) -> Result<KnownPorts> {
    let model = make_canonical_system(kind, params)?;
    if model.n != 2 {
        return Err(Error::config("kind", format!("`{kind}` is not a one-degree-of-freedom system")));
    }
    let delta = model.r.as_constant().map_or(0.0, |r| r[(1, 1)]);
    let force = match kind {
        "forced_spring" | "forced_complex_spring" | "duffing" => Some(PeriodicForce {
            amplitude: params.get("f0").unwrap_or(0.5),
            omega: params.get("omega").unwrap_or(1.2),
            complex: kind == "forced_complex_spring",
        }),
        _ => None,
    };
    // N multiplies ∂H/∂p = p/m, and the dissipation is −δ ∂H/∂p
    Ok(KnownPorts {
        damping: -delta,
        force,
    })
}

/// JSON model definition.
///
/// Canonical kinds are built by name from `params`; `kind = "linear"` takes
/// explicit `J, R, g, xi` matrices and the quadratic energy matrix `Q`
/// (`H = ½xᵀQx`); `kind = "composite"` interconnects `parts` through
/// `coupling`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDefinition {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "params_empty")]
    pub params: Params,
    #[serde(default, rename = "J", skip_serializing_if = "Option::is_none")]
    pub j: Option<Vec<Vec<f64>>>,
    #[serde(default, rename = "R", skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<Vec<Vec<f64>>>,
    #[serde(default, rename = "Q", skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parts: Option<Vec<ModelDefinition>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<Vec<CouplingEntry>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub reexport_coupled: bool,
}

fn params_empty(p: &Params) -> bool {
    p.0.is_empty()
}

impl ModelDefinition {
    pub fn canonical(kind: &str, params: Params) -> Self {
        Self {
            kind: kind.to_string(),
            params,
            ..Default::default()
        }
    }

    pub fn build(&self) -> Result<SphsModel> {
        let mut model = match self.kind.as_str() {
            "linear" => self.build_linear()?,
            "composite" => {
                let parts = self
                    .parts
                    .as_ref()
                    .ok_or_else(|| Error::config("parts", "composite model needs `parts`"))?
                    .iter()
                    .map(ModelDefinition::build)
                    .collect::<Result<Vec<_>>>()?;
                let coupling = self.coupling.clone().unwrap_or_default();
                compose_many(&parts, &coupling, self.reexport_coupled)?
            }
            kind => make_canonical_system(kind, &self.params)?,
        };
        for (field, declared, actual) in [("n", self.n, model.n), ("m", self.m, model.m), ("k", self.k, model.k)] {
            if let Some(d) = declared {
                if d != actual {
                    return Err(Error::config(
                        field,
                        format!("declared {d} but the model has {actual}"),
                    ));
                }
            }
        }
        if let Some(name) = &self.name {
            model.name = name.clone();
        }
        Ok(model)
    }

    fn build_linear(&self) -> Result<SphsModel> {
        let q = matrix_from_rows(
            self.q.as_ref().ok_or_else(|| Error::config("Q", "linear model needs `Q`"))?,
            "Q",
        )?;
        let n = q.nrows();
        let mat = |field: &str, rows: &Option<Vec<Vec<f64>>>, default_cols: usize| -> Result<DMatrix<f64>> {
            match rows {
                Some(r) if !r.is_empty() => matrix_from_rows(r, field),
                _ => Ok(DMatrix::zeros(n, default_cols)),
            }
        };
        let j = mat("J", &self.j, n)?;
        let r = mat("R", &self.r, n)?;
        let g = mat("g", &self.g, 0)?;
        let xi = mat("xi", &self.xi, 0)?;
        SphsModel::new(
            self.name.clone().unwrap_or_else(|| "linear".into()),
            MatrixField::Constant(j),
            MatrixField::Constant(r),
            MatrixField::Constant(g),
            MatrixField::Constant(xi),
            Arc::new(QuadraticEnergy::new(q)?),
        )
    }

    /// Linear definition reproducing a model's matrices evaluated at `x`.
    pub fn linearized_snapshot(model: &SphsModel, x: &DVector<f64>) -> Self {
        Self {
            name: Some(model.name.clone()),
            kind: "linear".into(),
            n: Some(model.n),
            m: Some(model.m),
            k: Some(model.k),
            j: Some(matrix_to_rows(&model.j.eval(x))),
            r: Some(matrix_to_rows(&model.r.eval(x))),
            g: Some(matrix_to_rows(&model.g.eval(x))),
            xi: Some(matrix_to_rows(&model.xi.eval(x))),
            q: Some(matrix_to_rows(&model.energy.hessian(x))),
            ..Default::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::validate::{check_energy_gradient, validate_structure};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn default_params(kind: &str) -> Params {
        match kind {
            "damped_spring" => Params::from([("delta", 0.3)]),
            "forced_spring" | "forced_complex_spring" => {
                Params::from([("f0", 0.5), ("omega", 1.3)])
            }
            "stochastic_spring" => Params::from([("sigma", 0.2)]),
            "agent_ring" => Params::from([("n_agents", 3.0), ("sigma", 0.2)]),
            _ => Params::new(),
        }
    }

    fn random_states(n: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0)))
            .collect()
    }

    #[test]
    fn simple_spring_energy() {
        let model = make_canonical_system("simple_spring", &Params::from([("m", 1.0), ("k", 1.0)])).unwrap();
        assert_eq!(model.hamiltonian(&DVector::from_vec(vec![1.0, 0.0])), 0.5);
        let model = make_canonical_system("simple_spring", &Params::from([("m", 2.0), ("k", 3.0)])).unwrap();
        // ½kq² + p²/2m
        assert_eq!(model.hamiltonian(&DVector::from_vec(vec![1.0, 2.0])), 1.5 + 1.0);
    }

    #[test]
    fn duffing_defaults() {
        let model = make_canonical_system("duffing", &Params::new()).unwrap();
        assert_eq!(model.hamiltonian(&DVector::zeros(2)), 0.0);
        let x = DVector::from_vec(vec![1.0, 1.0]);
        assert!((model.hamiltonian(&x) - (0.5 - 0.5 + 0.25)).abs() < 1e-15);
        assert_eq!(model.r.as_constant().unwrap()[(1, 1)], 0.3);
        let mut u = DVector::zeros(1);
        let t = 0.7;
        model.default_input().unwrap().control(t, &x, &mut u);
        assert_eq!(u[0], 0.5 * (1.2 * t).sin());
    }

    #[test]
    fn damped_spring_dissipation_matrix() {
        let model = make_canonical_system("damped_spring", &Params::from([("delta", 0.3)])).unwrap();
        let r = model.r.as_constant().unwrap();
        assert_eq!(r.as_slice(), &[0.0, 0.0, 0.0, 0.3]);
    }

    #[test]
    fn unknown_kind_and_missing_parameter() {
        assert!(matches!(
            make_canonical_system("pendulum", &Params::new()),
            Err(Error::Config { ref field, .. }) if field == "kind"
        ));
        assert!(matches!(
            make_canonical_system("damped_spring", &Params::new()),
            Err(Error::Config { ref field, .. }) if field == "delta"
        ));
        assert!(matches!(
            make_canonical_system("simple_spring", &Params::from([("mass", 1.0)])),
            Err(Error::Config { ref field, .. }) if field == "mass"
        ));
    }

    #[test]
    fn every_canonical_system_is_structurally_valid() {
        for (i, kind) in CANONICAL_KINDS.iter().enumerate() {
            let model = make_canonical_system(kind, &default_params(kind)).unwrap();
            let probes = random_states(model.n, 1000, i as u64);
            let report = validate_structure(&model, &probes).unwrap();
            assert!(report.is_valid(), "{kind}: {:?}", report.violations);
        }
    }

    #[test]
    fn every_canonical_energy_gradient_matches_finite_differences() {
        for (i, kind) in CANONICAL_KINDS.iter().enumerate() {
            let model = make_canonical_system(kind, &default_params(kind)).unwrap();
            let probes = random_states(model.n, 100, 100 + i as u64);
            let violations = check_energy_gradient(&model, &probes).unwrap();
            assert!(violations.is_empty(), "{kind}: {violations:?}");
        }
    }

    #[test]
    fn definition_json_round_trip_and_strictness() {
        let json = r#"{"name":"osc","n":2,"m":1,"k":0,"kind":"simple_spring","params":{"m":1.0,"k":2.0}}"#;
        let def: ModelDefinition = serde_json::from_str(json).unwrap();
        let model = def.build().unwrap();
        assert_eq!(model.name, "osc");
        assert_eq!(model.hamiltonian(&DVector::from_vec(vec![1.0, 0.0])), 1.0);

        let bad = r#"{"kind":"simple_spring","colour":"red"}"#;
        assert!(serde_json::from_str::<ModelDefinition>(bad).is_err());

        let wrong_dim = r#"{"kind":"simple_spring","n":3}"#;
        let def: ModelDefinition = serde_json::from_str(wrong_dim).unwrap();
        assert!(matches!(def.build(), Err(Error::Config { ref field, .. }) if field == "n"));
    }

    #[test]
    fn linear_definition() {
        let json = r#"{"kind":"linear","J":[[0,1],[-1,0]],"R":[[0,0],[0,0.5]],"g":[[0],[1]],"Q":[[2,0],[0,1]]}"#;
        let model: ModelDefinition = serde_json::from_str(json).unwrap();
        let model = model.build().unwrap();
        assert_eq!((model.n, model.m, model.k), (2, 1, 0));
        let x = DVector::from_vec(vec![1.0, 1.0]);
        let (drift, _) = model.eval_dynamics(&x, &DVector::zeros(1), 0.0).unwrap();
        assert_eq!(drift.as_slice(), &[1.0, -2.5]);
        let snap = ModelDefinition::linearized_snapshot(&model, &x);
        let rebuilt = snap.build().unwrap();
        let (d2, _) = rebuilt.eval_dynamics(&x, &DVector::zeros(1), 0.0).unwrap();
        assert_eq!(drift, d2);
    }

    #[test]
    fn known_ports_of_damped_and_forced() {
        let ports = known_ports("damped_spring", &Params::from([("delta", 0.3)])).unwrap();
        assert_eq!(ports.damping, -0.3);
        assert_eq!(ports.force_at(1.0), 0.0);
        let ports = known_ports("forced_complex_spring", &Params::from([("f0", 2.0), ("omega", 1.0)])).unwrap();
        assert!((ports.force_at(1.0) - 2.0 * 1f64.sin() * 2f64.sin()).abs() < 1e-15);
    }
}
