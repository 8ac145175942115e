pub mod cli;
pub mod engine;
pub mod error;
pub mod evalviz;
pub mod losses;
pub mod maskops;
pub mod net;
pub mod shapesdata;

pub use error::{Error, Result};
