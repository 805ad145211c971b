//! Detection post-processing, evaluation and numerical verification for
//! aerial object detection.
//!
//! The crate is organized around [`geometry::BBox`], the axis-aligned box
//! every other module consumes:
//!
//! - [`anchors`]: FPN anchor grids over P2-P6 and box-delta encoding.
//! - [`suppression`]: hard NMS and linear Soft-NMS.
//! - [`evalkit`]: COCO-style AP with configurable area ranges.
//! - [`datakit`]: COCO JSON ingestion, patch tiling and dataset statistics.
//! - [`losses`]: orthogonal projection and adaptive class suppression losses.
//! - [`recal`]: naive tensor ops for scSE recalibration and the RPN head.
//! - [`simkit`]: seeded synthetic crowded scenes and NMS A/B comparison.

pub mod anchors;
pub mod checks;
pub mod datakit;
mod error;
pub mod evalkit;
pub mod geometry;
pub mod gradcheck;
pub mod losses;
pub mod recal;
pub mod rng;
pub mod simkit;
pub mod suppression;
pub mod tensorio;

pub use error::{Error, Result};
pub use geometry::{BBox, ImageSize};
