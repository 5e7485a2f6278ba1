//! Dense `f64` tensors with tape-based reverse-mode differentiation.

mod adam;
mod dense;
pub mod gradcheck;
mod params;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use dense::Tensor;
pub use params::{Param, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};

pub(crate) use tape::{log_sigmoid, sigmoid};
