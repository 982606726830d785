pub mod error;
pub mod data;
pub mod ndiff;
pub mod encoder;
pub mod dccl;
pub mod maf;
pub mod metrics;
pub mod train;
pub mod infer;
pub mod container;
pub mod config;
pub mod pipeline;
pub mod synthexp;
pub mod cli;

pub use error::{Error, Result};
