//! Power-preserving feedback interconnection of explicit input-state-output
//! models.
//!
//! Coupling port `a` of model A with port `b` of model B with sign `s` closes
//! the gyrator loop
//!
//! ```text
//! u_A[a] = −s·y_B[b] + e_A,    u_B[b] = s·y_A[a] + e_B
//! ```
//!
//! which moves the port terms into the interconnection matrix:
//! `J_AB = −s g_A[:,a] g_B[:,b]ᵀ`, `J_BA = s g_B[:,b] g_A[:,a]ᵀ`. Dissipation
//! and noise channels stay block diagonal and `H = Σ Hᵢ`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::model::{ControlLaw, Hamiltonian, MatrixField, SphsModel, SumEnergy};
use crate::{Error, Result};

fn default_b_model() -> usize {
    1
}
fn default_sign() -> f64 {
    1.0
}

/// One coupled port pair. Model indices refer to the list passed to
/// [`compose_many`]; for a pairwise [`compose`] they default to A = 0, B = 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingEntry {
    #[serde(default)]
    pub a_model: usize,
    pub a_port: usize,
    #[serde(default = "default_b_model")]
    pub b_model: usize,
    pub b_port: usize,
    #[serde(default = "default_sign")]
    pub sign: f64,
}

impl CouplingEntry {
    pub fn new(a_port: usize, b_port: usize, sign: f64) -> Self {
        Self {
            a_model: 0,
            a_port,
            b_model: 1,
            b_port,
            sign,
        }
    }

    pub fn between(a_model: usize, a_port: usize, b_model: usize, b_port: usize, sign: f64) -> Self {
        Self {
            a_model,
            a_port,
            b_model,
            b_port,
            sign,
        }
    }
}

/// Pairwise coupling of two models.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub pairs: Vec<CouplingEntry>,
    /// Keep the coupled ports as external inputs `e_A, e_B`.
    #[serde(default)]
    pub reexport_coupled: bool,
}

#[derive(Clone)]
struct Layout {
    parts: Vec<SphsModel>,
    x_offsets: Vec<usize>,
    w_offsets: Vec<usize>,
    n: usize,
    k: usize,
    pairs: Vec<CouplingEntry>,
    /// `(model, port)` of each composite input column.
    inputs: Vec<(usize, usize)>,
}

impl Layout {
    fn split(&self, x: &DVector<f64>, i: usize) -> DVector<f64> {
        x.rows(self.x_offsets[i], self.parts[i].n).into_owned()
    }

    fn assemble_j(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.n, self.n);
        let gs: Vec<_> = (0..self.parts.len())
            .map(|i| {
                let xi = self.split(x, i);
                let part = &self.parts[i];
                let (oi, ni) = (self.x_offsets[i], part.n);
                j.view_mut((oi, oi), (ni, ni)).copy_from(part.j.eval(&xi).as_ref());
                part.g.eval(&xi).into_owned()
            })
            .collect();
        for c in &self.pairs {
            let (a, b) = (c.a_model, c.b_model);
            let ga = gs[a].column(c.a_port);
            let gb = gs[b].column(c.b_port);
            let (oa, na) = (self.x_offsets[a], self.parts[a].n);
            let (ob, nb) = (self.x_offsets[b], self.parts[b].n);
            let mut ab = j.view_mut((oa, ob), (na, nb));
            ab.ger(-c.sign, &ga, &gb, 1.0);
            let mut ba = j.view_mut((ob, oa), (nb, na));
            ba.ger(c.sign, &gb, &ga, 1.0);
        }
        j
    }

    fn assemble_r(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut r = DMatrix::zeros(self.n, self.n);
        for (i, part) in self.parts.iter().enumerate() {
            let o = self.x_offsets[i];
            r.view_mut((o, o), (part.n, part.n))
                .copy_from(part.r.eval(&self.split(x, i)).as_ref());
        }
        r
    }

    fn assemble_g(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.n, self.inputs.len());
        for (col, &(i, port)) in self.inputs.iter().enumerate() {
            let part = &self.parts[i];
            let gi = part.g.eval(&self.split(x, i));
            g.view_mut((self.x_offsets[i], col), (part.n, 1))
                .copy_from(&gi.column(port));
        }
        g
    }

    fn assemble_xi(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut xi = DMatrix::zeros(self.n, self.k);
        for (i, part) in self.parts.iter().enumerate() {
            xi.view_mut((self.x_offsets[i], self.w_offsets[i]), (part.n, part.k))
                .copy_from(part.xi.eval(&self.split(x, i)).as_ref());
        }
        xi
    }
}

fn field(
    layout: &Arc<Layout>,
    constant: bool,
    rows: usize,
    cols: usize,
    assemble: fn(&Layout, &DVector<f64>) -> DMatrix<f64>,
) -> MatrixField {
    if constant {
        MatrixField::Constant(assemble(layout, &DVector::zeros(layout.n)))
    } else {
        let layout = Arc::clone(layout);
        MatrixField::state_dependent(rows, cols, move |x| assemble(&layout, x))
    }
}

/// Exported inputs driven by the parts' own default inputs.
struct CompositeInput {
    layout: Arc<Layout>,
}

impl ControlLaw for CompositeInput {
    fn control(&self, t: f64, x: &DVector<f64>, out: &mut DVector<f64>) {
        let layout = &self.layout;
        let parts: Vec<Option<DVector<f64>>> = layout
            .parts
            .iter()
            .enumerate()
            .map(|(i, p)| {
                p.default_input().map(|law| {
                    let mut u = DVector::zeros(p.m);
                    law.control(t, &layout.split(x, i), &mut u);
                    u
                })
            })
            .collect();
        for (col, &(i, port)) in layout.inputs.iter().enumerate() {
            out[col] = parts[i].as_ref().map_or(0.0, |u| u[port]);
        }
    }
}

/// Interconnect `models` through `coupling`; with `reexport_coupled` the
/// coupled ports remain available as external inputs.
pub fn compose_many(
    models: &[SphsModel],
    coupling: &[CouplingEntry],
    reexport_coupled: bool,
) -> Result<SphsModel> {
    if models.is_empty() {
        return Err(Error::config("parts", "composition needs at least one model"));
    }
    let mut used = vec![Vec::<bool>::new(); models.len()];
    for (i, m) in models.iter().enumerate() {
        used[i] = vec![false; m.m];
    }
    for (idx, c) in coupling.iter().enumerate() {
        let field = format!("coupling[{idx}]");
        if c.a_model >= models.len() || c.b_model >= models.len() {
            return Err(Error::config(&field, "model index out of range"));
        }
        if c.sign != 1.0 && c.sign != -1.0 {
            return Err(Error::config(&field, "sign must be +1 or -1"));
        }
        for (model, port) in [(c.a_model, c.a_port), (c.b_model, c.b_port)] {
            let slot = used[model]
                .get_mut(port)
                .ok_or_else(|| Error::config(&field, format!("model {model} has no port {port}")))?;
            if *slot {
                return Err(Error::config(&field, format!("port {port} of model {model} is coupled twice")));
            }
            *slot = true;
        }
    }

    let mut x_offsets = Vec::new();
    let mut w_offsets = Vec::new();
    let (mut n, mut k) = (0, 0);
    let mut inputs = Vec::new();
    for (i, m) in models.iter().enumerate() {
        x_offsets.push(n);
        w_offsets.push(k);
        n += m.n;
        k += m.k;
        inputs.extend((0..m.m).filter(|&p| reexport_coupled || !used[i][p]).map(|p| (i, p)));
    }
    let layout = Arc::new(Layout {
        parts: models.to_vec(),
        x_offsets,
        w_offsets,
        n,
        k,
        pairs: coupling.to_vec(),
        inputs,
    });
    let all_const = |f: fn(&SphsModel) -> &MatrixField| models.iter().all(|m| f(m).as_constant().is_some());
    let g_const = all_const(|m| &m.g);
    let m_out = layout.inputs.len();
    let j = field(&layout, g_const && all_const(|m| &m.j), n, n, Layout::assemble_j);
    let r = field(&layout, all_const(|m| &m.r), n, n, Layout::assemble_r);
    let g = field(&layout, g_const, n, m_out, Layout::assemble_g);
    let xi = field(&layout, all_const(|m| &m.xi), n, k, Layout::assemble_xi);
    let energy: Arc<dyn Hamiltonian> = Arc::new(SumEnergy::new(models.iter().map(|m| Arc::clone(&m.energy)).collect()));
    let name = models.iter().map(|m| m.name.as_str()).collect::<Vec<_>>().join("+");
    let mut composite = SphsModel::new(name, j, r, g, xi, energy)?;
    let has_default = layout.inputs.iter().any(|&(i, _)| models[i].default_input().is_some());
    if has_default {
        composite = composite.with_default_input(Arc::new(CompositeInput { layout }));
    }
    Ok(composite)
}

/// Pairwise composition of `a` (model 0) and `b` (model 1).
pub fn compose(a: &SphsModel, b: &SphsModel, coupling: &Coupling) -> Result<SphsModel> {
    if let Some(bad) = coupling.pairs.iter().find(|c| c.a_model != 0 || c.b_model != 1) {
        return Err(Error::config("coupling", format!("pairwise coupling must link model 0 to 1, got {bad:?}")));
    }
    compose_many(&[a.clone(), b.clone()], &coupling.pairs, coupling.reexport_coupled)
}

/// Power `∂ₓHᵀ J_c ∂ₓH` exchanged through the coupling terms `J_c` of a
/// composite; zero up to rounding for gyrative couplings.
pub fn coupling_power(models: &[SphsModel], coupling: &[CouplingEntry], x: &DVector<f64>) -> Result<f64> {
    let composite = compose_many(models, coupling, false)?;
    let decoupled = compose_many(models, &[], false)?;
    let jc = composite.j.eval(x).into_owned() - decoupled.j.eval(x).as_ref();
    let grad = composite.energy.gradient(x);
    Ok(grad.dot(&(jc * &grad)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::{simulate, IntegratorConfig};
    use crate::model::{QuadraticEnergy, ZeroControl};
    use crate::numeric::inf_norm;
    use crate::systems::{make_canonical_system, Params};
    use crate::validate::validate_structure;
    use proptest::prelude::*;

    fn oscillator() -> SphsModel {
        make_canonical_system("simple_spring", &Params::new()).unwrap()
    }

    fn noisy() -> SphsModel {
        make_canonical_system("stochastic_spring", &Params::from([("sigma", 0.3), ("delta", 0.1)])).unwrap()
    }

    #[test]
    fn coupled_oscillators_form_lossless_system() {
        let c = compose(&oscillator(), &oscillator(), &Coupling {
            pairs: vec![CouplingEntry::new(0, 0, 1.0)],
            reexport_coupled: false,
        })
        .unwrap();
        assert_eq!((c.n, c.m, c.k), (4, 0, 0));
        let j = c.j.as_constant().unwrap();
        assert!(inf_norm(&(j + j.transpose())) <= 1e-12);
        let probes: Vec<_> = (0..5).map(|i| DVector::from_element(4, i as f64 * 0.3 - 0.5)).collect();
        assert!(validate_structure(&c, &probes).unwrap().is_valid());

        let x0 = DVector::from_vec(vec![1.0, 0.0, 0.0, -0.5]);
        let config = IntegratorConfig::collocation(0.01, 1);
        let e = simulate(&c, &ZeroControl, &x0, 100.0, &config, 1, 0).unwrap();
        let h0 = c.hamiltonian(&x0);
        let drift = e.trajectories[0].states.iter().map(|x| (c.hamiltonian(x) - h0).abs()).fold(0.0, f64::max);
        assert!(drift <= 1e-10, "{drift}");
    }

    #[test]
    fn decoupled_composition_matches_independent_runs() {
        let a = noisy();
        let b = make_canonical_system("stochastic_spring", &Params::from([("sigma", 0.5)])).unwrap();
        let c = compose_many(&[a.clone(), b.clone()], &[], false).unwrap();
        assert_eq!((c.n, c.m, c.k), (4, 2, 2));
        let config = IntegratorConfig::collocation(0.01, 1);
        let x0 = DVector::from_vec(vec![1.0, 0.2, -0.3, 0.4]);
        let joint = simulate(&c, &ZeroControl, &x0, 1.0, &config, 1, 5).unwrap();
        let tr = &joint.trajectories[0];
        // replay each block with its own noise columns
        for (block, model) in [(0usize, &a), (1usize, &b)] {
            let xb = x0.rows(2 * block, 2).into_owned();
            let mut stepper = crate::integrate::Stepper::new(model, &ZeroControl, &config).unwrap();
            let mut x = xb;
            let mut next = DVector::zeros(2);
            for (s, dw) in tr.noise_increments.iter().enumerate() {
                let w = DVector::from_vec(vec![dw[block]]);
                stepper.step(tr.times[s], &x, &w, &mut next).unwrap();
                x.copy_from(&next);
                let joint_block = tr.states[s + 1].rows(2 * block, 2);
                assert!((&x - joint_block).amax() <= 1e-12);
            }
        }
    }

    #[test]
    fn three_decoupled_models_are_independent() {
        let parts = vec![oscillator(), noisy(), oscillator()];
        let c = compose_many(&parts, &[], false).unwrap();
        let (b, d) = c.linear_drift().map(|b| (b, c.xi.as_constant().unwrap().clone())).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                if i / 2 != j / 2 {
                    assert_eq!(b[(i, j)], 0.0);
                }
            }
        }
        assert_eq!(d.shape(), (6, 1));
    }

    #[test]
    fn chain_of_three_oscillators_conserves_energy() {
        let parts = [oscillator(), oscillator(), oscillator()];
        // a second force port on the middle oscillator lets it couple twice
        let middle = &parts[1];
        let g2 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let mid = SphsModel::new(
            "mid",
            middle.j.clone(),
            middle.r.clone(),
            MatrixField::Constant(g2),
            middle.xi.clone(),
            Arc::clone(&middle.energy),
        )
        .unwrap();
        let parts = vec![parts[0].clone(), mid, parts[2].clone()];
        let coupling = [CouplingEntry::between(0, 0, 1, 0, 1.0), CouplingEntry::between(1, 1, 2, 0, -1.0)];
        let c = compose_many(&parts, &coupling, false).unwrap();
        assert_eq!((c.n, c.m), (6, 0));
        let x0 = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.5, -0.2, 0.1]);
        let e = simulate(&c, &ZeroControl, &x0, 20.0, &IntegratorConfig::collocation(0.01, 2), 1, 0).unwrap();
        let h0 = c.hamiltonian(&x0);
        for x in &e.trajectories[0].states {
            assert!((c.hamiltonian(x) - h0).abs() <= 1e-10);
        }
        let split: f64 = parts.iter().enumerate().map(|(i, p)| p.hamiltonian(&x0.rows(2 * i, 2).into_owned())).sum();
        assert_eq!(split, h0);
    }

    #[test]
    fn port_double_use_and_mismatch_are_rejected() {
        let a = oscillator();
        let twice = [CouplingEntry::new(0, 0, 1.0), CouplingEntry::new(0, 0, -1.0)];
        assert!(matches!(compose_many(&[a.clone(), a.clone()], &twice, false), Err(Error::Config { .. })));
        let missing = [CouplingEntry::new(0, 3, 1.0)];
        assert!(compose_many(&[a.clone(), a.clone()], &missing, false).is_err());
        let bad_sign = [CouplingEntry::new(0, 0, 0.5)];
        assert!(compose_many(&[a.clone(), a.clone()], &bad_sign, false).is_err());
        let out_of_range = [CouplingEntry::between(0, 0, 2, 0, 1.0)];
        assert!(compose_many(&[a.clone(), a], &out_of_range, false).is_err());
    }

    #[test]
    fn reexport_keeps_coupled_ports_and_default_inputs() {
        let forced = make_canonical_system("forced_spring", &Params::from([("f0", 1.0), ("omega", 2.0)])).unwrap();
        let pairs = vec![CouplingEntry::new(0, 0, 1.0)];
        let closed = compose(&forced, &oscillator(), &Coupling { pairs: pairs.clone(), reexport_coupled: false }).unwrap();
        assert_eq!(closed.m, 0);
        assert!(closed.default_input().is_none());
        let open = compose(&forced, &oscillator(), &Coupling { pairs, reexport_coupled: true }).unwrap();
        assert_eq!(open.m, 2);
        let mut u = DVector::zeros(2);
        open.default_input().unwrap().control(std::f64::consts::FRAC_PI_4, &DVector::zeros(4), &mut u);
        assert!((u[0] - 1.0).abs() < 1e-15 && u[1] == 0.0);
    }

    #[test]
    fn composition_json_roundtrip() {
        let json = r#"{"a_port": 0, "b_port": 0, "sign": -1}"#;
        let c: CouplingEntry = serde_json::from_str(json).unwrap();
        assert_eq!(c, CouplingEntry::new(0, 0, -1.0));
        assert!(serde_json::from_str::<CouplingEntry>(r#"{"a_port":0,"b_port":0,"gain":1}"#).is_err());
    }

    fn random_linear(seed: &[f64], n: usize, m: usize) -> SphsModel {
        let mut it = seed.iter().cycle().copied();
        let a = DMatrix::from_fn(n, n, |_, _| it.next().unwrap());
        let j = &a - a.transpose();
        let b = DMatrix::from_fn(n, n, |_, _| it.next().unwrap());
        let r = &b * b.transpose();
        let g = DMatrix::from_fn(n, m, |_, _| it.next().unwrap());
        let c = DMatrix::from_fn(n, n, |_, _| it.next().unwrap());
        let q = &c * c.transpose() + DMatrix::identity(n, n);
        SphsModel::new(
            "random",
            MatrixField::Constant(j),
            MatrixField::Constant(r),
            MatrixField::Constant(g),
            MatrixField::zeros(n, 0),
            Arc::new(QuadraticEnergy::new(q).unwrap()),
        )
        .unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn composite_interconnection_is_skew_and_lossless(
            seed_a in prop::collection::vec(-1.0f64..1.0, 32),
            seed_b in prop::collection::vec(-1.0f64..1.0, 32),
            na in 1usize..4, nb in 1usize..4,
            sign in prop::bool::ANY,
            x in prop::collection::vec(-2.0f64..2.0, 8),
        ) {
            let a = random_linear(&seed_a, na, 2);
            let b = random_linear(&seed_b, nb, 2);
            let s = if sign { 1.0 } else { -1.0 };
            let coupling = [CouplingEntry::new(1, 0, s), CouplingEntry::new(0, 1, -s)];
            let parts = [a, b];
            let c = compose_many(&parts, &coupling, false).unwrap();
            let j = c.j.as_constant().unwrap();
            prop_assert!(inf_norm(&(j + j.transpose())) <= 1e-12);
            let x = DVector::from_iterator(na + nb, x.into_iter().take(na + nb));
            let power = coupling_power(&parts, &coupling, &x).unwrap();
            let scale = c.energy.gradient(&x).norm_squared().max(1.0);
            prop_assert!(power.abs() <= 1e-12 * scale);
        }
    }
}
