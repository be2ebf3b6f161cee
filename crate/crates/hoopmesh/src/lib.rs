//! File formats, configuration, the reconstruction pipeline and the
//! `hoopmesh` command-line tool built on `hoopmesh-core`.

pub mod config;
mod error;
pub mod formats;
pub mod pipeline;
pub mod scene;

pub use error::{Error, ExitCode, Result};
pub use hoopmesh_core as core;
