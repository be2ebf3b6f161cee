//! Geometry, optimization and evaluation core for reconstructing basketball
//! players from a single broadcast frame.
//!
//! The crate is `no_std` and only needs an allocator. Everything that touches
//! the filesystem, the command line or serialization formats lives in the
//! `hoopmesh` companion crate.
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod camera;
pub mod codec;
pub mod composer;
pub mod court;
mod error;
pub mod eval;
pub mod geom;
pub mod mesh;
pub mod optim;
pub mod meshnet;
pub mod placement;
pub mod skeleton;
pub mod skinning;
pub mod sparse;
pub mod synth;

pub use error::{Error, Result};
