pub mod cli;
pub mod data;
pub mod design;
pub mod dss;
pub mod experiments;
pub mod error;
pub mod inference;
pub mod model;
pub mod model_file;
pub mod rng;
pub mod rules;
pub mod sampler;
pub mod trees;

pub use error::{Error, Result};
