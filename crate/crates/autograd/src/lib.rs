//! Small dense-tensor engine with tape-based reverse-mode differentiation.
//!
//! Everything is `f64`. The op set is exactly what a pre-norm transformer
//! with masked reconstruction and classification heads needs.

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod schedule;
pub mod tensor;

pub use error::{AutogradError, Result};
pub use gradcheck::{check_gradients, relative_error, GradCheckReport};
pub use graph::{gelu_value, Gradients, Graph, Var};
pub use optim::{AdamWConfig, OptimizerState};
pub use schedule::{wsd_lr, LrSchedule};
pub use tensor::Tensor;
