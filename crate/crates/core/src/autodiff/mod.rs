//! Small reverse-mode automatic differentiation engine over dense `f64`
//! matrices, plus the Adam optimizer.

mod adam;
mod array;
mod tape;

pub use adam::Adam;
pub use array::Array;
pub use tape::{GradStore, Gradients, ParamId, ParamStore, Tape, Var};
