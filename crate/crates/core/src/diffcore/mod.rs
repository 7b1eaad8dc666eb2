//! Dense f64 tensors with reverse-mode differentiation.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod params;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{analytic_grad, gradcheck, gradcheck_coords, DEFAULT_H};
pub use graph::{CustomOp, GradSink, Gradients, Graph, UnaryKind, Var};
pub use ops::conv::conv_out_len;
pub use ops::elementwise::{gelu, sigmoid};
pub use ops::norm::LAYERNORM_EPS;
pub use params::{Bound, ParamStore};
pub use tensor::Tensor;
