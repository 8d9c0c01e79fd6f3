pub mod autodiff;
pub mod error;
pub mod gradsuite;
pub mod io;
pub mod kernels;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
