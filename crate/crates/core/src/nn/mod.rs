//! Minimal CPU autodiff engine: NCHW tensors, a reverse-mode tape with the
//! layers the generators and critics need, parameter sets and optimizers.

pub mod kernels;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use optim::{Optimizer, OptimizerKind};
pub use params::{Bound, ParamId, ParamSet};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;
