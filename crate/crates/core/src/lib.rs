pub mod binarize;
pub mod cli;
pub mod error;
pub mod evaluate;
pub mod fusion;
pub mod io;
pub mod morphometry;
pub mod phantom;
pub mod pipeline;
pub mod reconstruct;
pub mod segment2d;
pub mod volume;

pub use error::{Error, Result};
