//! Dense tensors, a reverse-mode tape, and the Adam optimiser.

pub mod gradcheck;
mod optim;
mod sparse;
mod tape;
mod tensor;

pub use optim::{AdamState, Bound, ParamId, ParamStore};
pub use sparse::CsrMatrix;
pub use tape::{add_all, Gradients, Tape, Var};
pub use tensor::{cosine, Tensor};
