pub mod acceptance;
pub mod attention;
pub mod cost;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod overhead;
pub mod reduction;
pub mod rng;
pub mod runtime;

pub use error::{GtpError, Result};
