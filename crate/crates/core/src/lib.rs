//! Desk-scale laboratory for image-based transfer-learning cloud retrieval
//! from thermal-infrared geostationary imagery.
//!
//! The crate is organised bottom-up:
//!
//! - [`geo`]: lat/lon grids, rasters, resampling, viewing and solar geometry
//! - [`scene`]: synthetic truth fields, toy forward model, label simulators
//! - [`tiles`]: 64×64 tiling and mosaic reconstruction
//! - [`nn`]: a small reverse-mode autodiff engine and the ResUnet
//! - [`train`]: two-stage pre-train / fine-tune procedure and scene inference
//! - [`forest`]: pixel-based random-forest baseline
//! - [`eval`]: confusion matrices, scores, joint histograms, stratification
//! - [`climo`]: cloud fractions, ISCCP classes, diurnal cycles

pub mod climo;
pub mod error;
pub mod eval;
pub mod forest;
pub mod geo;
pub mod scene;
pub mod nn;
pub mod tiles;
pub mod train;

pub use error::{Error, Result};
pub use geo::{BBox, GeoGrid, Mask, Raster};
