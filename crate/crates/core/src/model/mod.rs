//! Designs, field data, computer models and their parameter gradients, and the
//! orthogonality constraint set built from those gradients.

mod constraint;
mod data;
pub mod reference;
mod simulator;

pub use constraint::{build_constraint_set, ConstraintSet};
pub use data::{sample_field_data, Design, FieldObservations, NoiseModel};
pub use simulator::{model_gradient, ComputerModel, GradientMode, Simulator, DEFAULT_FD_STEP};
