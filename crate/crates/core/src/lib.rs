//! Splat-voxel fuse-and-refine pipeline for 3D Gaussian splatting.

pub mod camera;
pub mod error;
pub mod gaussian;
pub mod image;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod primitives;
pub mod raster;
pub mod stream;
pub mod synthetic;
pub mod voxel;

pub use camera::Camera;
pub use error::{Error, Result};
pub use image::ImageBuffer;
pub use io::{RunConfig, TensorStore, TransformerConfig};
pub use primitives::{PrimitiveSet, Splat};
