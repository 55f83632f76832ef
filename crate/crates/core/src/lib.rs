pub mod ablation;
pub mod bench;
pub mod cli;
pub mod data;
pub mod error;
pub mod model;
pub mod prompt;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
