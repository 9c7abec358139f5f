//! Dense numeric core: tensors, a reverse-mode tape, finite-difference
//! gradient checking and the Adam optimizer.

mod fd;
mod linear;
mod optim;
mod scalar;
mod tape;
mod tensor;

pub use fd::{finite_diff_check, GradReport, REL_FLOOR};
pub use linear::{BoundLinear, Linear};
pub use optim::{Adam, Cosine};
pub use scalar::{gemm_into, Scalar};
pub use tape::{gelu, Gradients, Tape, Var};
pub use tensor::{affine, argmax, cross_entropy, softmax_rows, Tensor};
