//! Command-line front end: reproducible simulate / restore / evaluate runs with
//! on-disk artifacts and checksummed manifests.

pub mod commands;
pub mod error;
pub mod layout;
pub mod manifest;

pub use error::{CliError, CliResult};
