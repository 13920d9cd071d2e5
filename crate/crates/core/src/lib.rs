//! Point-of-gaze refinement over prediction streams.
//!
//! Given initial per-eye PoG predictions from any upstream gaze network,
//! this crate filters unreliable samples (validity gating), removes the
//! person-specific translation offset against a dataset-wise mean
//! (self-calibration) and learns a person-specific affine correction from
//! history heatmaps with a small spatial-transformer network.
//!
//! The crate is `no_std` + `alloc`; all IO, file formats and the CLI live
//! in the companion `gaze-refine-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod affine;
pub mod geometry;
pub mod pipeline;
pub mod pt;
pub mod raster;
pub mod refinement;
pub mod rng;
pub mod sim;

mod math;

pub use affine::AffineParams;
pub use geometry::{GazeDirection, GazeOrigin, PoG, ScreenSpec, Unit};
pub use raster::Heatmap;
