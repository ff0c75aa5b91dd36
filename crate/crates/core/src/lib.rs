//! Neural feature fields conditioned on semantic voxel grids and object boxes,
//! composited along camera rays and decoded to images.

// `!(x > 0.0)` is used on purpose to reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod compositor;
pub mod error;
pub mod fixtures;
pub mod generators;
pub mod objectives;
pub mod optim;
pub mod sampling;
pub mod scene;

pub use error::{Error, Result};
