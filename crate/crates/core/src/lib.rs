//! Geometric and numerical primitives for multi-view dense point cloud
//! generation: view fusion into canonical coordinates, differentiable
//! pseudo-rendering by inverse-depth splatting, joint 2D projection losses,
//! z-buffer rasterization oracles, surface sampling, and bidirectional
//! nearest-neighbor shape metrics, plus a two-stage fitting harness that
//! optimizes free view maps against rendered depth/mask supervision.
//!
//! The crate is `no_std` (with `alloc`); all file formats, threading, and the
//! command-line surface live in the companion `pointfit` crate. Every
//! operation here is a pure function over immutable inputs, and all
//! parallelizable entry points take a [`pool::TaskPool`] so results are
//! bit-identical for any worker count.

#![cfg_attr(not(test), no_std)]
// Numeric kernels walk several parallel arrays by index, and validation
// predicates spell `!(x > y)` so NaN lands in the reject branch.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod error;
pub mod fit;
pub mod geometry;
pub mod loss;
pub mod math;
pub mod mesh;
pub mod metrics;
pub mod pool;
pub mod render;
pub mod rng;
pub mod splat;

pub use error::Error;
pub use geometry::{CameraIntrinsics, PointCloud, ProjectionMode, RigidTransform, ViewMaps};
pub use mesh::{SurfaceSamples, TriangleMesh};
pub use metrics::ShapeError;
pub use pool::{SerialPool, TaskPool};
pub use render::{DepthImage, MaskImage};
pub use rng::Pcg32;
pub use splat::SplatConfig;
