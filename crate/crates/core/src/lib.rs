pub mod cli;
pub mod error;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod operator;
pub mod optimizer;
pub mod radial;
pub mod verify;

pub use error::{Error, Result};
