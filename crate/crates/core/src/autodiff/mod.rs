//! Dense and sparse linear algebra with reverse-mode gradients.

pub mod optim;
pub mod sparse;
pub mod tape;
pub mod tensor;

pub use optim::{RmsProp, RmsPropConfig};
pub use sparse::{CsrMatrix, SparsePattern};
pub use tape::{best_other_class, sigmoid, CustomOp, Gradients, Tape, Var};
pub use tensor::Tensor;
