//! File formats, image IO, experiment drivers and the `barkid` command line
//! built on `barkid-core`.

pub mod bench;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod formats;
pub mod imageio;
pub mod patches;
pub mod pipeline;
pub mod report;
pub mod sweep;

pub use error::{Error, Result};
