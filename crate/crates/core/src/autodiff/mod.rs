//! Minimal reverse-mode differentiation over dense f64 tensors.

pub mod cases;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod ops;
pub mod plans;
pub mod second_order;
pub mod tensor;

pub use graph::{Gradients, Graph, NodeId};
pub use ops::Op;
pub use plans::{CompositePlan, LabelConvPlan, TrilerpPlan};
pub use second_order::{second_order_grad, GradNormPenalty};
pub use tensor::Tensor;
