//! Dense tensors with a reverse-mode tape.
//!
//! Everything the model needs is expressed with a small op set: matrix
//! products, pointwise maps, concatenation, row softmax, inverted dropout,
//! stop-gradient and a smooth-L1 reduction. All values are `f64`; every op
//! rejects non-finite output instead of propagating it.

mod gradcheck;
mod kernels;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, op_suite, relative_error, GradCheckReport, DEFAULT_EPS};
pub use kernels::gemm;
pub use tape::{sigmoid, smooth_l1_elem, softmax_into, Binary, Gradients, Tape, Unary, Var};
pub use tensor::Tensor;
