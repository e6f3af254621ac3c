pub mod cli;
pub mod config;
pub mod critic;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod mapper;
pub mod metrics;
pub mod mixers;
pub mod nn;
pub mod predictor;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
