//! Dense tensors, a reverse-mode autodiff tape, Adam, and a gradient checker.

mod adam;
mod gradcheck;
mod graph;
pub(crate) mod kernels;
mod params;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{finite_diff_check, param_gradcheck, relative_error, ParamCheckReport};
pub use graph::{Graph, Var};
pub use params::{ParamId, ParamStore};
pub use tensor::{gelu, layer_norm, softmax, Tensor};
