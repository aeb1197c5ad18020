//! Segmentation-aided radiance fields for depth completion of transparent
//! objects, small enough to train on a CPU in seconds.
//!
//! The crate is organized around seven subsystems:
//!
//! - [`encodings`]: multiresolution hash grid, sinusoidal frequency
//!   embedding, and spherical-harmonics view encoding.
//! - [`field`]: the radiance/semantic field MLP stack with hand-written
//!   reverse-mode gradients over a flat parameter store.
//! - [`render`]: ray generation, stratified/occupancy sampling, and
//!   differentiable alpha compositing of color, semantics, and depth.
//! - [`train`]: the four-term loss, Adam, and the time-capped loop.
//! - [`maskhier`]: grouping of unlabeled instance masks into hierarchical
//!   non-overlapping channels via convex hulls.
//! - [`scenegen`]: an analytic ray tracer producing posed RGB, true depth,
//!   sensor-style corrupted depth, and instance masks for synthetic scenes.
//! - [`dataset`] / [`metrics`] / [`pointcloud`]: scene-directory IO, depth
//!   metrics, and point-cloud export.

pub mod cli;
pub mod dataset;
pub mod encodings;
pub mod error;
pub mod field;
pub mod maskhier;
pub mod math;
pub mod metrics;
pub mod pointcloud;
pub mod render;
pub mod scenegen;
pub mod train;

pub use error::{Error, Result};
pub use math::{Aabb, Grid2, Vec3};
