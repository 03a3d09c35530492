#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
//! Online learning of neural surface light fields.
//!
//! Posed RGBD frames are unprojected into colored, directed point clouds and
//! routed to region-local agents. Each agent owns a small color model
//! (hash-grid position encoder feeding a spherical-harmonics decoder) and
//! trains it asynchronously from its own data memory. Novel views are
//! rendered by ray casting a surface mesh and querying the agents.
//!
//! Module map:
//!
//! - [`numerics`]: dense layers, MLPs with explicit backward passes, Adam.
//! - [`encoding`]: multi-resolution hash grid and the real SH basis.
//! - [`models`]: the SH-decoded surface light field model and the
//!   concatenation baseline, losses, training loop, checkpoint blobs.
//! - [`mana`]: region grid, agents, distribution and budgeting, snapshots.
//! - [`ingest`]: unprojection, sequence readers, synthetic scenes, meshes.
//! - [`render`]: BVH ray casting, view rendering, PSNR/SSIM, angle buckets.
//! - [`verify`]: invariant suites shared by the CLI and the test-suite.

pub mod encoding;
pub mod error;
pub mod ingest;
pub mod mana;
pub mod models;
pub mod numerics;
pub mod render;
pub mod verify;

mod real;

pub use error::{Error, Result};
pub use real::Real;
