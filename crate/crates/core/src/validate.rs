//! Structural checks of the `J`, `R` fields and of energy gradients.

use nalgebra::{DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::model::SphsModel;
use crate::numeric::{all_finite, fd_gradient, fd_step, inf_norm};
use crate::{Error, Result};

pub const SKEW_TOLERANCE: f64 = 1e-10;
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;
/// Smallest admissible eigenvalue of `R`.
pub const PSD_TOLERANCE: f64 = -1e-9;
pub const GRADIENT_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    NotSkewSymmetric,
    NotSymmetric,
    NotPositiveSemidefinite,
    NonFinite,
    GradientMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub kind: ViolationKind,
    pub probe: usize,
    /// Norm of the defect, the offending eigenvalue, or the relative error.
    pub magnitude: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub probes: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

fn check_probes(model: &SphsModel, probes: &[DVector<f64>]) -> Result<()> {
    if probes.is_empty() {
        return Err(Error::Contract("at least one probe state is required".into()));
    }
    for x in probes {
        if x.len() != model.n {
            return Err(Error::config(
                "probe_states",
                format!("probe of length {} for a model of dimension {}", x.len(), model.n),
            ));
        }
    }
    Ok(())
}

/// Check `J = −Jᵀ` and `R = Rᵀ ⪰ 0` at every probe state.
pub fn validate_structure(model: &SphsModel, probes: &[DVector<f64>]) -> Result<ValidationReport> {
    check_probes(model, probes)?;
    let mut violations = Vec::new();
    let mut push = |field: &str, kind, probe, magnitude| {
        violations.push(Violation {
            field: field.to_string(),
            kind,
            probe,
            magnitude,
        })
    };
    for (i, x) in probes.iter().enumerate() {
        let j = model.j.eval(x);
        if !all_finite(j.as_slice()) {
            push("J", ViolationKind::NonFinite, i, f64::NAN);
        } else {
            let skew = inf_norm(&(j.as_ref() + j.transpose()));
            if skew > SKEW_TOLERANCE {
                push("J", ViolationKind::NotSkewSymmetric, i, skew);
            }
        }
        let r = model.r.eval(x);
        if !all_finite(r.as_slice()) {
            push("R", ViolationKind::NonFinite, i, f64::NAN);
            continue;
        }
        let asym = (r.as_ref() - r.transpose()).amax();
        if asym > SYMMETRY_TOLERANCE {
            push("R", ViolationKind::NotSymmetric, i, asym);
        }
        let sym = (r.as_ref() + r.transpose()) * 0.5;
        let min_eig = SymmetricEigen::new(sym).eigenvalues.min();
        if min_eig < PSD_TOLERANCE {
            push("R", ViolationKind::NotPositiveSemidefinite, i, min_eig);
        }
        for (field, mat) in [("g", model.g.eval(x)), ("xi", model.xi.eval(x))] {
            if !all_finite(mat.as_slice()) {
                push(field, ViolationKind::NonFinite, i, f64::NAN);
            }
        }
    }
    Ok(ValidationReport {
        probes: probes.len(),
        violations,
    })
}

/// Compare `∂ₓH` with central differences of `H` (step `1e-6·(1+|x|)`).
pub fn check_energy_gradient(model: &SphsModel, probes: &[DVector<f64>]) -> Result<Vec<Violation>> {
    check_probes(model, probes)?;
    let mut out = Vec::new();
    for (i, x) in probes.iter().enumerate() {
        let analytic = model.energy.gradient(x);
        let fd = fd_gradient(|v| model.energy.value(v), x, fd_step(x));
        let scale = analytic.amax().max(fd.amax()).max(1e-8);
        let rel = (&analytic - &fd).amax() / scale;
        if !(rel < GRADIENT_TOLERANCE) {
            out.push(Violation {
                field: "energy".into(),
                kind: ViolationKind::GradientMismatch,
                probe: i,
                magnitude: rel,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{symplectic, MatrixField, QuadraticEnergy};
    use nalgebra::DMatrix;
    use std::sync::Arc;

    fn model_with(j: DMatrix<f64>, r: DMatrix<f64>) -> SphsModel {
        SphsModel::new(
            "test",
            MatrixField::Constant(j),
            MatrixField::Constant(r),
            MatrixField::zeros(2, 0),
            MatrixField::zeros(2, 0),
            Arc::new(QuadraticEnergy::diagonal(&[1.0, 1.0])),
        )
        .unwrap()
    }

    #[test]
    fn canonical_symplectic_is_valid() {
        let m = model_with(symplectic(1), DMatrix::zeros(2, 2));
        let report = validate_structure(&m, &[DVector::from_vec(vec![0.3, 4.0])]).unwrap();
        assert!(report.is_valid());
    }

    #[test]
    fn indefinite_dissipation_reported_with_eigenvalue() {
        let r = DMatrix::from_row_slice(2, 2, &[-0.1, 0.0, 0.0, 1.0]);
        let m = model_with(symplectic(1), r);
        let report = validate_structure(&m, &[DVector::zeros(2)]).unwrap();
        assert_eq!(report.violations.len(), 1);
        let v = &report.violations[0];
        assert_eq!(v.kind, ViolationKind::NotPositiveSemidefinite);
        assert!((v.magnitude + 0.1).abs() < 1e-12);
    }

    #[test]
    fn non_skew_interconnection_reported() {
        let j = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let m = model_with(j, DMatrix::zeros(2, 2));
        let report = validate_structure(&m, &[DVector::zeros(2)]).unwrap();
        assert_eq!(report.violations[0].kind, ViolationKind::NotSkewSymmetric);
        assert_eq!(report.violations[0].field, "J");
    }

    #[test]
    fn probe_errors() {
        let m = model_with(symplectic(1), DMatrix::zeros(2, 2));
        assert!(matches!(validate_structure(&m, &[]), Err(Error::Contract(_))));
        assert!(matches!(
            validate_structure(&m, &[DVector::zeros(3)]),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn damped_spring_valid_at_random_states() {
        use crate::systems::{make_canonical_system, Params};
        use rand::{Rng, SeedableRng};
        let model = make_canonical_system("damped_spring", &Params::from([("m", 1.0), ("k", 1.0), ("delta", 0.3)])).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let probes: Vec<_> = (0..100)
            .map(|_| DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0)))
            .collect();
        assert!(validate_structure(&model, &probes).unwrap().is_valid());
        let negative = make_canonical_system("damped_spring", &Params::from([("delta", -0.3)])).unwrap();
        assert!(!validate_structure(&negative, &probes).unwrap().is_valid());
    }
}
