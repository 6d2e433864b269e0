pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod detector;
pub mod error;
pub mod eval;
pub mod layers;
pub mod membership;
pub mod numcore;
pub mod optim;

pub use error::{Error, Result};
