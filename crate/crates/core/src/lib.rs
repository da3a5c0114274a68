//! Desk-scale laboratory for stochastic port-Hamiltonian systems.
//!
//! * [`model`], [`systems`], [`validate`]: models in local coordinates and
//!   the canonical library,
//! * [`integrate`]: Euler–Maruyama, Heun and stochastic Gauss collocation,
//! * [`passivity`]: energy balances and strong/weak/discrete passivity,
//! * [`interconnect`]: power-preserving feedback composition,
//! * [`agents`]: the stochastic agent ring and its Gaussian stationary law,
//! * [`phnn`]: port-Hamiltonian neural networks and baselines,
//! * [`es`]: self-adaptive evolution strategy and controller tuning.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod error;
pub mod es;
pub mod integrate;
pub mod interconnect;
pub mod model;
pub mod numeric;
pub mod passivity;
pub mod phnn;
pub mod systems;
pub mod validate;

pub use error::{Error, Result};
pub use integrate::{simulate, Ensemble, IntegratorConfig, Scheme, Trajectory};
pub use model::{ControlLaw, Hamiltonian, MatrixField, SphsModel, State, ZeroControl};
pub use systems::{make_canonical_system, ModelDefinition, Params};
pub use validate::{validate_structure, ValidationReport};
