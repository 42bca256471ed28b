//! Geometric conditioning for close-up novel view synthesis.
//!
//! The crate turns posed views with estimated depth and confidence into conditioning
//! images for a target camera:
//!
//! - [`warp`]: hierarchical forward warping with confidence-aware reliability division
//!   and multi-reference merging.
//! - [`occlusion`]: density-adaptive depth dilation that removes background splats
//!   leaking through sparse foreground.
//! - [`fusion`]: cross-view geometric and photometric consistency checks, count maps and
//!   the fused global point cloud.
//! - [`metrics`]: PSNR/SSIM, confidence weights, the weighted supervision loss and
//!   close-up camera synthesis.
//! - [`synth`]: analytic ray-traced scenes with exact depth and visibility labels.
//! - [`scene_io`] and [`pipeline`]: on-disk formats and the stage drivers behind the CLI.

pub mod fusion;
pub mod geometry;
pub mod metrics;
pub mod occlusion;
pub mod pipeline;
pub mod raster;
pub mod scene_io;
pub mod synth;
pub mod warp;

pub use geometry::{Camera, GeometryError, Intrinsics, Pose, Projection};
pub use raster::{DepthMap, Image, Mask, Raster};
pub use scene_io::{PointCloud, SceneIoError, ViewRecord};
