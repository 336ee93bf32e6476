pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod fir;
pub mod graph;
pub mod moments;
pub mod noisy;
pub mod oracle;
pub mod perturbation;
pub mod spectral;
pub mod validate;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
