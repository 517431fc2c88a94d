pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod model;
pub mod netcore;
pub mod train;

pub use error::{Error, ErrorKind, Result};
