//! Gated imaging toolkit.
//!
//! Models a three-slice gated camera with a pulsed flood illuminator, synthesizes and
//! fits range-intensity profiles, renders noisy gated stacks from ground-truth scenes
//! and reconstructs per-pixel range and albedo with a Levenberg-Marquardt fit.
//! Loss functions and evaluation metrics for dense depth prediction live alongside.

pub mod cli;
pub mod domain;
pub mod error;
pub mod estimate;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod profile;
pub mod simulate;

pub use domain::{AlbedoMap, DepthMap, GatedStack, Mask, Raster, SparseDepth, SparseSample};
pub use error::{Error, Result};
pub use estimate::{EstimateResult, LmOptions, PixelEstimate};
pub use metrics::{GroundTruth, MetricsReport};
pub use profile::{ChebyshevProfile, ProfileSet};

/// Speed of light in meters per nanosecond.
pub const SPEED_OF_LIGHT_M_PER_NS: f64 = 0.299_792_458;

/// Sensor bit depth.
pub const BIT_DEPTH: u32 = 10;

/// Largest digital number a 10-bit slice can hold.
pub const MAX_DN: f64 = 1023.0;

/// Number of gated slices per frame.
pub const NUM_SLICES: usize = 3;
