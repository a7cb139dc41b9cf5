use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};
use crate::scalar::Real;

/// Pinhole camera. Camera space looks down `+z`; pixel `(i, j)` covers
/// `[i, i+1) × [j, j+1)` with its center at `(i + 0.5, j + 0.5)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera<T> {
    pub width: usize,
    pub height: usize,
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    /// Rotation part of the world-to-camera transform.
    pub rotation: Mat3<T>,
    /// Translation part of the world-to-camera transform.
    pub translation: Vec3<T>,
    pub near: T,
    pub far: T,
}

pub const DEFAULT_NEAR: f64 = 0.01;
pub const DEFAULT_FAR: f64 = 100.0;

impl<T: Real> Camera<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        width: usize,
        height: usize,
        fx: T,
        fy: T,
        cx: T,
        cy: T,
        rotation: Mat3<T>,
        translation: Vec3<T>,
        near: T,
        far: T,
    ) -> Result<Self> {
        let cam = Self { width, height, fx, fy, cx, cy, rotation, translation, near, far };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Camera("image size must be positive".into()));
        }
        if !(self.fx > T::zero() && self.fy > T::zero()) {
            return Err(Error::Camera(format!("focal lengths must be positive, got {} {}", self.fx, self.fy)));
        }
        if !(self.near > T::zero() && self.near < self.far) {
            return Err(Error::Camera(format!("need 0 < near < far, got {} {}", self.near, self.far)));
        }
        if !self.rotation.is_orthonormal(T::lit(1e-6)) {
            return Err(Error::Camera("world_to_camera rotation is not orthonormal".into()));
        }
        Ok(())
    }

    /// Camera looking from `eye` at `target`; `up` picks the roll. Image rows
    /// grow along camera `+y`, which is the projection of `-up`.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        eye: Vec3<T>,
        target: Vec3<T>,
        up: Vec3<T>,
        width: usize,
        height: usize,
        fov_x_radians: T,
    ) -> Result<Self> {
        let forward = (target - eye)
            .normalized()
            .ok_or_else(|| Error::Camera("eye and target coincide".into()))?;
        let right = forward
            .cross(up)
            .normalized()
            .ok_or_else(|| Error::Camera("up is parallel to the view direction".into()))?;
        let down = forward.cross(right);
        let rotation = Mat3::from_rows([right.to_array(), down.to_array(), forward.to_array()]);
        let translation = -rotation.mul_vec(eye);
        let half = T::lit(0.5);
        let fx = half * T::of_usize(width) / (half * fov_x_radians).tan();
        Self::new(
            width,
            height,
            fx,
            fx,
            half * T::of_usize(width),
            half * T::of_usize(height),
            rotation,
            translation,
            T::lit(DEFAULT_NEAR),
            T::lit(DEFAULT_FAR),
        )
    }

    #[inline]
    pub fn world_to_camera(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotation.mul_vec(p) + self.translation
    }

    pub fn camera_to_world_dir(&self, d: Vec3<T>) -> Vec3<T> {
        self.rotation.transpose().mul_vec(d)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3<T> {
        -self.rotation.transpose().mul_vec(self.translation)
    }

    /// Continuous pixel coordinates of a camera-space point.
    #[inline]
    pub fn project(&self, p: Vec3<T>) -> (T, T) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// Camera-space ray through the center of pixel `(i, j)`, with unit z.
    #[inline]
    pub fn pixel_ray(&self, i: usize, j: usize) -> Vec3<T> {
        let half = T::lit(0.5);
        Vec3::new(
            (T::of_usize(i) + half - self.cx) / self.fx,
            (T::of_usize(j) + half - self.cy) / self.fy,
            T::one(),
        )
    }

    pub fn diagonal(&self) -> T {
        let w = T::of_usize(self.width);
        let h = T::of_usize(self.height);
        (w * w + h * h).sqrt()
    }

    pub fn cast<U: Real>(&self) -> Camera<U> {
        let c = |v: T| U::lit(v.as_f64());
        let mut rot = Mat3::<U>::zero();
        for i in 0..3 {
            for j in 0..3 {
                rot.m[i][j] = c(self.rotation.m[i][j]);
            }
        }
        Camera {
            width: self.width,
            height: self.height,
            fx: c(self.fx),
            fy: c(self.fy),
            cx: c(self.cx),
            cy: c(self.cy),
            rotation: rot,
            translation: self.translation.cast(),
            near: c(self.near),
            far: c(self.far),
        }
    }

    /// Same camera at a different resolution (intrinsics rescaled).
    pub fn rescaled(&self, width: usize, height: usize) -> Self {
        let sx = T::of_usize(width) / T::of_usize(self.width);
        let sy = T::of_usize(height) / T::of_usize(self.height);
        Self {
            width,
            height,
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            ..self.clone()
        }
    }
}
