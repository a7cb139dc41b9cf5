//! Learnable Gaussian primitives, pinhole cameras and view-dependent color.

pub mod camera;
pub mod model;
pub mod sh;

pub use camera::Camera;
pub use model::{build_covariance, evaluate_density, normalize_quat, GaussianCloud, GaussianParams};
pub use sh::sh_to_color;
