//! Dense tensors, the differentiable primitives and the autodiff tape.

pub mod conv;
mod dense;
pub mod gradcheck;
pub mod norm;
pub mod pool;
pub mod tape;

pub use conv::{conv2d, conv2d_transpose, ConvSpec, Padding};
pub use dense::Tensor;
pub use gradcheck::{grad_check, grad_check_input, relative_error, GradCheckReport};
pub use pool::{global_avg_pool, max_pool2d};
pub use tape::{sigmoid, softmax_axis1, GradNode, Gradients, ParamId, Tape, Var, BCE_EPS};
