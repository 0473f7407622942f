pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod gradsuite;
pub mod harness;
pub mod model;
pub mod nn;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{no_grad, Real, Tensor};
