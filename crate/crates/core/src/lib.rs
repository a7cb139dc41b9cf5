//! CPU differentiable 3D Gaussian splatting with effective-rank analysis.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar for the common cases.

pub mod densify;
pub mod erank;
pub mod error;
pub mod gaussian;
pub mod io;
pub mod math;
pub mod mesh;
pub mod raster;
pub mod regularizers;
pub mod scalar;
pub mod scene;
pub mod train;

pub use error::{Error, Result};
pub use gaussian::{Camera, GaussianCloud, GaussianParams};
pub use scalar::Real;

pub type GaussianCloudF32 = GaussianCloud<f32>;
pub type GaussianCloudF64 = GaussianCloud<f64>;
pub type CameraF32 = Camera<f32>;
pub type CameraF64 = Camera<f64>;
