pub mod autodiff;
pub mod corpus;
pub mod diffusion;
pub mod embed;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod temporal;

pub use error::{Error, Result};
