//! Gaussian-process regression of the inverse model.
//!
//! Each output (left and right track command) gets its own scalar GP with a
//! squared-exponential ARD kernel. Hyperparameters maximize the exact log
//! marginal likelihood with L-BFGS; inputs and targets are standardized per
//! dimension before fitting.

pub mod exact;
mod kernel;
mod model;
pub mod optim;

pub use exact::{Hyperparameters, Posterior};
pub use kernel::{kernel_matrix, kernel_matrix_with, SeArdKernel};
pub use model::{
    default_init, held_out_error, FitReport, GpConfig, GpModel, HeldOutError, OutputReport,
    Prediction, Sample, INPUT_DIM, KERNEL_KIND, OUTPUT_DIM,
};
