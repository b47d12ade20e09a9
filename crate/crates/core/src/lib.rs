pub mod error;
pub mod gptq;
pub mod gradients;
pub mod hessian;
pub mod linalg;
pub mod model;
pub mod pipeline;
pub mod planner;
pub mod rng;
pub mod store;
pub mod transformer;

pub use error::{Error, Result};
pub use linalg::DenseMatrix;
