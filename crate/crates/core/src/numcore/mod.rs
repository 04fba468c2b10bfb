//! Dense sequence tensors, neural primitives and the differentiation
//! machinery shared by every model component.

pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;

pub use gradcheck::{grad_check, grad_check_with, GradCheckOptions, GradCheckReport};
pub use graph::{Graph, Var};
pub use ops::{Activation, BatchNormStats, Mode};
pub use optim::{clip_grad_norm, AdamW};
pub use params::{ParamId, ParamStore};
pub use rng::RngState;
pub use tensor::SequenceTensor;
