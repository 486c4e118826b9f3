//! Dense `f64` matrices, a reverse-mode autodiff tape and named parameters.

mod matrix;
mod params;
mod tape;

pub use matrix::Matrix;
pub use params::{Param, ParamStore};
pub use tape::{Adjacency, AttnSegment, Gradients, RowSpan, Tape, Var};
