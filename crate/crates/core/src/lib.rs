pub mod analysis;
pub mod buffer;
pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod eval;
pub mod graph;
pub mod losses;
pub mod models;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
