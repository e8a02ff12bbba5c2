pub mod baselines;
pub mod data;
pub mod error;
pub mod filter;
pub mod harness;
pub mod linalg;
pub mod rff;
pub mod verify;

pub use error::{Error, Result};
