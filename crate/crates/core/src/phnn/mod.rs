//! Port-Hamiltonian neural networks and the baselines they are compared
//! against.
//!
//! Networks are plain MLPs differentiated by a small reverse-mode tape. The
//! energy-based models predict `ẋ = (J − R̂)∂ₓĤ + F̂`; training needs the
//! gradient of a loss that itself contains `∂ₓĤ`, so the input gradient is
//! built on the tape and differentiated a second time.

mod dataset;
mod evaluate;
mod mlp;
mod network;
mod poincare;
mod tape;
mod train;

pub use dataset::{
    generate_dataset, sample_annulus, sample_trajectory, true_derivative, Dataset, DatasetConfig, Record, Split,
};
pub use evaluate::{
    evaluate, evaluate_field, rollout, EvalConfig, EvalReport, ModelField, TrajectoryReport, VectorField,
};
pub use mlp::{Mlp, MlpForward, MlpVars};
pub use network::{port_hamiltonian_map, symplectic_map, Architecture, NetworkKind, NetworkModel};
pub use poincare::{
    dispersion, field_section, model_section, poincare_section, write_section_csv, Dispersion, DEFAULT_TRANSIENT,
    MIN_PERIODS,
};
pub use tape::{Tape, Var};
pub use train::{loss, loss_gradient, train, train_from, Adam, LossParts, TrainConfig, TrainOutcome};
