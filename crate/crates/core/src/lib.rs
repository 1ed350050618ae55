pub mod bayes;
pub mod cli;
pub mod climate;
pub mod config;
pub mod cox;
pub mod error;
pub mod grid;
pub mod io;
pub mod kernel;
pub mod propagation;
pub mod rng;
pub mod sim;
pub mod stats;

pub use error::{IpmError, Result};
