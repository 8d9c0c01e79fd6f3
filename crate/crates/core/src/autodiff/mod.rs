//! Reverse-mode differentiation over the kernel set in [`crate::kernels`].

mod gradcheck;
mod tape;

pub use gradcheck::{grad_check, grad_check_floored, grad_check_sampled, rel_err, rel_err_floored};
pub use tape::{Gradients, NodeId, Tape, Var};
