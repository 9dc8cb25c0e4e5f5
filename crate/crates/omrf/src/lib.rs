//! Runner, file formats and command-line front end for `omrf-core`.

pub mod bench;
pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod source;

pub use error::{Error, Result};
