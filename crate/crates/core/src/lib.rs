//! Edge perception pipeline for human action recognition.
//!
//! The crate turns recorded 2D skeletons, depth images and RGB frames into
//! tracked 3D user positions and per-period action decisions:
//!
//! ```text
//! ingest -> simplify/lift -> track -> crop/resize -> window -> classify -> fuse
//! ```
//!
//! Each stage lives in its own module and is usable on its own. The
//! [`pipeline`] module wires them together behind bounded queues and the
//! `edgehar` binary exposes `run`, `bench`, `eval` and `synth`.

pub mod camera;
pub mod classifier;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod skeleton;
pub mod synth;
pub mod tracker;
pub mod windowing;

pub use error::{Error, Result};
