//! Deterministic emulation of expensive simulators from a table of runs, and
//! plug-in estimation of the field noise covariance.

mod noise;
mod runs;
mod surrogate;

pub use noise::{estimate_noise_covariance, fit_smoother, SmootherFit, SmootherSpec};
pub use runs::RunTable;
pub use surrogate::{
    fit_surrogate, surrogate_as_model, OutcomeRecord, Surrogate, SurrogateOptions, SurrogateRecord,
    TrainingSummary, KERNEL_NAME,
};
