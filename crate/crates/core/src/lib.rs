//! Coordinate-system and keypoint-format transforms for keypoint estimation,
//! worked in a continuous image plane where adjacent pixel samples sit one
//! unit apart (an image `w_px` pixels wide spans `w_px - 1` units).
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: homogeneous 2D transforms (crop, resize, rotate, flip).
//! - [`raster`]: sampled image grids, bilinear inverse warping, grid file formats.
//! - [`codec`]: keypoint <-> heatmap encoders and decoders (CCRF, Gaussian,
//!   DARK refinement, and the biased quarter-offset decode).
//! - [`pipeline`]: train/test/flip pipelines under the unit-length or the
//!   pixel-count resize convention, with the flip compensation remedies.
//! - [`biaslab`]: an ideal-network oracle plus Monte Carlo and closed-form
//!   error engines.
//! - [`io`]: COCO keypoint ingestion and CSV/JSON reports.

pub mod biaslab;
pub mod codec;
pub mod error;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod raster;

pub use error::{Error, Result};
pub use geometry::{PlaneSize, Point, Roi, Transform2D};
pub use raster::{BorderPolicy, ImageGrid};
