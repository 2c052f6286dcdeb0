pub mod augment;
pub mod cli;
pub mod data;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod ssl;
pub mod tempcnn;
pub mod tensor;

pub use error::{Error, Result};
pub use metrics::Decision;
pub use tensor::{ProbMatrix, Real, Tensor};
