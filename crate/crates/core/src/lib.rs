//! Synthetic face generation by recombining triangulated regions of donor
//! faces, plus verification ROC evaluation of the result.

pub mod blend;
pub mod composite;
pub mod dataset;
pub mod donors;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod landmarks;
pub mod mesh;
pub mod pipeline;
pub mod procedural;
pub mod raster;
pub mod reshape;
pub mod seed;

pub use error::{Error, Result};

pub const DEFAULT_IMAGE_SIDE: u32 = 512;
