//! Reverse-mode automatic differentiation over dense arrays.
//!
//! Values are recorded on a [`Tape`] through [`Var`] handles; every op
//! computes its forward value eagerly and stores enough context for the
//! reverse sweep. Elementwise binary ops broadcast one operand over the
//! leading axes of the other (the smaller shape must be a suffix of the
//! larger one, with `[]` for scalars).

mod adam;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use tape::{concat, spmm, surrogate_grad, Gradients, SpikeMode, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::sq_dist_raw;
