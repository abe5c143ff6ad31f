//! File formats, run configuration and the command-line driver for
//! `wsdec-core`.

pub mod annotations;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod features;
pub mod json;
pub mod output;
pub mod pipeline;
pub mod vocab;

pub use error::{Error, Result};
