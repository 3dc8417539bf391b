//! File formats, run configuration, the training driver and the
//! command-line interface on top of `genret-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
